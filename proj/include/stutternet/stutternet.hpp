#pragma once

#include "stutternet/audio_io.hpp"
#include "stutternet/config.hpp"
#include "stutternet/dataset.hpp"
#include "stutternet/error.hpp"
#include "stutternet/features.hpp"
#include "stutternet/metrics.hpp"
#include "stutternet/model_store.hpp"
#include "stutternet/nn/stutternet.hpp"
#include "stutternet/optim.hpp"
#include "stutternet/rng.hpp"
#include "stutternet/synth.hpp"
#include "stutternet/training.hpp"
