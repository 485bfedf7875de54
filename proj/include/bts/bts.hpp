#pragma once

// Umbrella header: respiratory sound classification with metadata-derived
// text descriptions fused into the audio pipeline.

#include "bts/audio.hpp"
#include "bts/common.hpp"
#include "bts/eval.hpp"
#include "bts/experiment.hpp"
#include "bts/ingest.hpp"
#include "bts/metrics.hpp"
#include "bts/model.hpp"
#include "bts/text.hpp"
#include "bts/train.hpp"
#include "bts/types.hpp"
#include "bts/wav.hpp"
