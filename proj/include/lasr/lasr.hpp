#pragma once

#include "lasr/checkpoint.hpp"
#include "lasr/cli.hpp"
#include "lasr/config.hpp"
#include "lasr/core.hpp"
#include "lasr/criterion.hpp"
#include "lasr/decoder.hpp"
#include "lasr/features.hpp"
#include "lasr/lm.hpp"
#include "lasr/model.hpp"
#include "lasr/plot.hpp"
#include "lasr/toy_corpus.hpp"
#include "lasr/train.hpp"
