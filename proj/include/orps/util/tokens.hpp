#pragma once

#include <cstddef>
#include <string_view>

namespace orps {

using TokenCount = std::size_t;

// Tokenizer-free estimate: one token per four bytes, rounded up. Subadditive,
// so a sum of per-part estimates bounds the estimate of their concatenation.
inline TokenCount estimate_tokens(std::string_view text) noexcept {
  return (text.size() + 3) / 4;
}

inline std::size_t bytes_for_tokens(TokenCount tokens) noexcept { return tokens * 4; }

}  // namespace orps
