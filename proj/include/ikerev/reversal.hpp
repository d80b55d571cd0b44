#pragma once

#include "ikerev/reversal/eval.hpp"
#include "ikerev/reversal/kl.hpp"
#include "ikerev/reversal/select.hpp"
#include "ikerev/reversal/tokens.hpp"
#include "ikerev/reversal/tune.hpp"
