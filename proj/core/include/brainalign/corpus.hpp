#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "brainalign/common.hpp"

namespace brainalign {

// Tokenized stimulus text partitioned into TR windows and exactly four
// consecutive runs. TR boundaries are half-open token ranges; run boundaries
// are half-open TR ranges.
struct StimulusCorpus {
    std::vector<int> tokens;
    std::vector<std::pair<int, int>> tr_boundaries;
    std::vector<std::pair<int, int>> run_boundaries;

    int n_trs() const { return static_cast<int>(tr_boundaries.size()); }

    // Tokens covering TRs [tr_begin, tr_end).
    std::vector<int> tr_tokens(int tr_begin, int tr_end) const;

    int run_of_tr(int tr) const;

    // Throws ContractError when TR ranges are not contiguous/covering or the
    // runs do not partition the TRs into exactly four consecutive sections.
    void validate() const;
};

StimulusCorpus make_corpus(std::uint64_t seed, int n_trs, int tokens_per_tr);

void save_corpus(const StimulusCorpus& corpus, const std::string& path);
StimulusCorpus load_corpus(const std::string& path);

}  // namespace brainalign
