#include "brainalign/corpus.hpp"

#include <fstream>
#include <nlohmann/json.hpp>

#include "brainalign/grammar.hpp"

namespace brainalign {

using nlohmann::json;

std::vector<int> StimulusCorpus::tr_tokens(int tr_begin, int tr_end) const {
    if (tr_begin < 0 || tr_end > n_trs() || tr_begin >= tr_end)
        throw ContractError("tr_tokens: bad TR range");
    const int lo = tr_boundaries[static_cast<std::size_t>(tr_begin)].first;
    const int hi = tr_boundaries[static_cast<std::size_t>(tr_end - 1)].second;
    return std::vector<int>(tokens.begin() + lo, tokens.begin() + hi);
}

int StimulusCorpus::run_of_tr(int tr) const {
    for (std::size_t r = 0; r < run_boundaries.size(); ++r)
        if (tr >= run_boundaries[r].first && tr < run_boundaries[r].second)
            return static_cast<int>(r);
    throw ContractError("run_of_tr: TR outside every run");
}

void StimulusCorpus::validate() const {
    if (tr_boundaries.empty()) throw ContractError("corpus: no TRs");
    int cursor = 0;
    for (const auto& [b, e] : tr_boundaries) {
        if (b != cursor || e <= b) throw ContractError("corpus: TR ranges must be contiguous and nonempty");
        cursor = e;
    }
    if (cursor != static_cast<int>(tokens.size()))
        throw ContractError("corpus: TR ranges must cover the token sequence");
    if (run_boundaries.size() != 4) throw ContractError("corpus: exactly 4 runs required");
    int tr_cursor = 0;
    for (const auto& [b, e] : run_boundaries) {
        if (b != tr_cursor || e <= b) throw ContractError("corpus: runs must be consecutive and nonempty");
        tr_cursor = e;
    }
    if (tr_cursor != n_trs()) throw ContractError("corpus: runs must partition the TRs");
}

StimulusCorpus make_corpus(std::uint64_t seed, int n_trs, int tokens_per_tr) {
    if (n_trs < 4) throw ConfigError("make_corpus: need at least 4 TRs");
    if (tokens_per_tr < 1) throw ConfigError("make_corpus: tokens_per_tr must be positive");

    StimulusCorpus c;
    const std::size_t total = static_cast<std::size_t>(n_trs) * static_cast<std::size_t>(tokens_per_tr);
    c.tokens = grammar::to_tokens(grammar::sample_text(seed, total));
    c.tr_boundaries.reserve(static_cast<std::size_t>(n_trs));
    for (int t = 0; t < n_trs; ++t)
        c.tr_boundaries.emplace_back(t * tokens_per_tr, (t + 1) * tokens_per_tr);

    // Four consecutive sections of near-equal length.
    const int base = n_trs / 4, extra = n_trs % 4;
    int cursor = 0;
    for (int r = 0; r < 4; ++r) {
        const int len = base + (r < extra ? 1 : 0);
        c.run_boundaries.emplace_back(cursor, cursor + len);
        cursor += len;
    }
    c.validate();
    return c;
}

void save_corpus(const StimulusCorpus& corpus, const std::string& path) {
    corpus.validate();
    json j;
    j["format"] = "balncorpus";
    j["version"] = 1;
    j["text"] = grammar::from_tokens(corpus.tokens);
    j["tokens"] = corpus.tokens;
    j["tr_boundaries"] = corpus.tr_boundaries;
    j["run_boundaries"] = corpus.run_boundaries;
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw FormatError("save_corpus: cannot open " + tmp);
        f << j.dump() << "\n";
    }
    std::rename(tmp.c_str(), path.c_str());
}

StimulusCorpus load_corpus(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("load_corpus: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw FormatError("load_corpus: " + path + ": " + e.what());
    }
    if (j.value("format", "") != "balncorpus")
        throw FormatError("load_corpus: " + path + " is not a corpus file");
    if (j.value("version", 0) != 1) throw FormatError("load_corpus: unsupported corpus version");
    StimulusCorpus c;
    c.tokens = j.at("tokens").get<std::vector<int>>();
    c.tr_boundaries = j.at("tr_boundaries").get<std::vector<std::pair<int, int>>>();
    c.run_boundaries = j.at("run_boundaries").get<std::vector<std::pair<int, int>>>();
    try {
        c.validate();
    } catch (const ContractError& e) {
        throw FormatError("load_corpus: " + path + ": " + e.what());
    }
    return c;
}

}  // namespace brainalign
