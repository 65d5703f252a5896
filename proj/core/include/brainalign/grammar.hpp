#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace brainalign::grammar {

// Byte-level tokenization: one token per character.
std::vector<int> to_tokens(const std::string& text);
std::string from_tokens(const std::vector<int>& tokens);

// One grammatical sentence from the synthetic language, terminated " .".
// The language mixes intransitive/transitive/copula clauses, negation,
// number agreement, and two-clause compounds with coherent connectives.
std::string sample_sentence(std::uint64_t seed);

// Concatenated sentences, space separated, clipped to exactly n_tokens bytes.
std::string sample_text(std::uint64_t seed, std::size_t n_tokens);

}  // namespace brainalign::grammar
