#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tempotokens/errors.hpp"

namespace tempo {

using Token = std::vector<double>;

/// Per-frame token lists c^(i) plus the attention distribution used to build
/// the attentive token (empty for single-vector conditioning).
struct ConditioningSequence {
  std::vector<std::vector<Token>> frames;
  std::vector<double> attention;

  std::size_t frame_count() const noexcept { return frames.size(); }

  /// Throws ValidationError unless every frame has the same number of tokens
  /// and every token the same width.
  void validate() const {
    if (frames.empty()) {
      throw ValidationError("conditioning sequence has no frames");
    }
    const std::size_t per_frame = frames.front().size();
    if (per_frame == 0) {
      throw ValidationError("conditioning frame has no tokens");
    }
    const std::size_t width = frames.front().front().size();
    if (width == 0) {
      throw ValidationError("conditioning token has zero width");
    }
    for (std::size_t i = 0; i < frames.size(); ++i) {
      if (frames[i].size() != per_frame) {
        throw ValidationError("frame " + std::to_string(i) + " has " +
                              std::to_string(frames[i].size()) +
                              " tokens, expected " + std::to_string(per_frame));
      }
      for (const Token &t : frames[i]) {
        if (t.size() != width) {
          throw ValidationError("inconsistent token width in frame " +
                                std::to_string(i));
        }
      }
    }
  }

  std::size_t tokens_per_frame() const {
    validate();
    return frames.front().size();
  }

  std::size_t token_dim() const {
    validate();
    return frames.front().front().size();
  }
};

} // namespace tempo
