#pragma once

#include "tempotokens/errors.hpp"
#include "tempotokens/numerics.hpp"
#include "tempotokens/binary.hpp"
#include "tempotokens/conditioning.hpp"
#include "tempotokens/media_io.hpp"
#include "tempotokens/peaks.hpp"
#include "tempotokens/audio_analysis.hpp"
#include "tempotokens/motion_analysis.hpp"
#include "tempotokens/av_align.hpp"
#include "tempotokens/tempo_tokens.hpp"
#include "tempotokens/diffusion_toy.hpp"
#include "tempotokens/synthgen.hpp"
