#pragma once

#include "mtgnet/core/error.hpp"
#include "mtgnet/core/ops.hpp"
#include "mtgnet/core/rng.hpp"
#include "mtgnet/core/tensor.hpp"
#include "mtgnet/core/version.hpp"
#include "mtgnet/data/array_io.hpp"
#include "mtgnet/data/augment.hpp"
#include "mtgnet/data/boundary.hpp"
#include "mtgnet/data/dataset.hpp"
#include "mtgnet/data/grid.hpp"
#include "mtgnet/data/png_io.hpp"
#include "mtgnet/data/sdf.hpp"
#include "mtgnet/data/synth.hpp"
#include "mtgnet/eval/gradcheck.hpp"
#include "mtgnet/eval/localization.hpp"
#include "mtgnet/eval/metrics.hpp"
#include "mtgnet/eval/stats.hpp"
#include "mtgnet/loss/uncertainty.hpp"
#include "mtgnet/model/backbone.hpp"
#include "mtgnet/model/migr.hpp"
#include "mtgnet/model/mrgr.hpp"
#include "mtgnet/model/mtgnet.hpp"
#include "mtgnet/nn/adam.hpp"
#include "mtgnet/nn/layers.hpp"
#include "mtgnet/pipeline/ablation.hpp"
#include "mtgnet/pipeline/checkpoint.hpp"
#include "mtgnet/pipeline/config.hpp"
#include "mtgnet/pipeline/inference.hpp"
#include "mtgnet/pipeline/report.hpp"
#include "mtgnet/pipeline/run_data.hpp"
#include "mtgnet/pipeline/trainer.hpp"
