#pragma once

#include "remir/rng.hpp"
#include "remir/tensor.hpp"
#include "remir/autograd.hpp"
#include "remir/corpus.hpp"
#include "remir/synth.hpp"
#include "remir/model.hpp"
#include "remir/encoder.hpp"
#include "remir/inference.hpp"
#include "remir/objective.hpp"
#include "remir/metrics.hpp"
#include "remir/trainer.hpp"
#include "remir/config.hpp"
#include "remir/cli.hpp"
