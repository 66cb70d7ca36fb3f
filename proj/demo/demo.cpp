// Walks one small query through every engine.

#include "bnnv/bnnv.hpp"

using namespace bnnv;

int main() {
  Network net = build_arch_xnor(8, 8, 5);
  randomize_network(net, 1);
  fmt::print("model: {} layers, {} binary parameters\n", net.layers.size(), count_params(net).binary);

  Rng rng(2);
  Tensor img(net.input_shape);
  for (auto& v : img.data()) v = double(uniform_int(rng, 0, 255));
  const Label label = predict(net, img);
  fmt::print("image predicted as class {}\n", label);

  for (double eps : {0.0, 1.0, 3.0}) {
    const auto prop = make_property(img, eps, label, false, net.num_classes);
    const auto ibp = verify_ibp(net, prop);
    const auto bab = bab_verify(net, prop, {10, 20'000, true});
    const auto fal = falsify(net, prop);
    fmt::print("eps={:<3} ibp={:<8} bab={:<8} ({} nodes) falsify={}\n", eps, verdict_string(ibp.kind),
               verdict_string(bab.kind), bab.stats.nodes, verdict_string(fal.kind));
    const auto& w = bab.witness ? bab.witness : fal.witness;
    if (w) {
      const auto y = network_forward(net, Tensor(net.input_shape, w->input_values)).values();
      fmt::print("  counterexample moves the prediction to class {} (checked: {})\n", predict(y),
                 check_witness(net, prop, *w) ? "yes" : "no");
    }
  }
}
