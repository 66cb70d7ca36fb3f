#pragma once

#include "bnnv/architectures.hpp"
#include "bnnv/bench.hpp"
#include "bnnv/cnf.hpp"
#include "bnnv/cnf_export.hpp"
#include "bnnv/compiled.hpp"
#include "bnnv/errors.hpp"
#include "bnnv/falsifier.hpp"
#include "bnnv/interval.hpp"
#include "bnnv/io.hpp"
#include "bnnv/log.hpp"
#include "bnnv/network.hpp"
#include "bnnv/onnx.hpp"
#include "bnnv/ppm.hpp"
#include "bnnv/protobuf.hpp"
#include "bnnv/random.hpp"
#include "bnnv/synth.hpp"
#include "bnnv/tensor.hpp"
#include "bnnv/verifier.hpp"
#include "bnnv/vnnlib.hpp"
