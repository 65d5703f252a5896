#include "brainalign/grammar.hpp"

#include <array>

#include "brainalign/rng.hpp"

namespace brainalign::grammar {

namespace {

struct NounEntry {
    const char* sg;
    const char* pl;
    bool animate;
    bool irregular;
};

struct VerbEntry {
    const char* third;  // runs
    const char* base;   // run
};

// clang-format off
constexpr std::array<NounEntry, 20> kNouns{{
    {"cat", "cats", true, false},    {"dog", "dogs", true, false},
    {"bird", "birds", true, false},  {"fox", "foxes", true, false},
    {"horse", "horses", true, false},{"frog", "frogs", true, false},
    {"bear", "bears", true, false},  {"wolf", "wolves", true, true},
    {"child", "children", true, true},{"mouse", "mice", true, true},
    {"stone", "stones", false, false},{"table", "tables", false, false},
    {"cup", "cups", false, false},   {"box", "boxes", false, false},
    {"lamp", "lamps", false, false}, {"door", "doors", false, false},
    {"wheel", "wheels", false, false},{"coin", "coins", false, false},
    {"leaf", "leaves", false, true}, {"knife", "knives", false, true},
}};

constexpr std::array<VerbEntry, 8> kTransVerbs{{
    {"sees", "see"}, {"finds", "find"}, {"likes", "like"}, {"chases", "chase"},
    {"holds", "hold"}, {"takes", "take"}, {"wants", "want"}, {"hears", "hear"},
}};

constexpr std::array<VerbEntry, 6> kIntransVerbs{{
    {"runs", "run"}, {"jumps", "jump"}, {"waits", "wait"},
    {"moves", "move"}, {"falls", "fall"}, {"sings", "sing"},
}};

// Ordered event chain used for discourse coherence.
constexpr std::array<VerbEntry, 6> kEventChain{{
    {"wakes", "wake"}, {"stands", "stand"}, {"walks", "walk"},
    {"eats", "eat"}, {"rests", "rest"}, {"sleeps", "sleep"},
}};

constexpr std::array<const char*, 5> kPosAdj{{"happy", "kind", "warm", "bright", "calm"}};
constexpr std::array<const char*, 5> kNegAdj{{"sad", "angry", "cold", "dark", "tired"}};
constexpr std::array<const char*, 6> kNeutralAdj{{"old", "new", "red", "blue", "green", "round"}};
constexpr std::array<std::array<const char*, 2>, 4> kSizePairs{{
    {{"big", "small"}}, {{"tall", "short"}}, {{"wide", "narrow"}}, {{"heavy", "light"}},
}};

// Number-marking determiners; "the" is number neutral.
constexpr std::array<const char*, 4> kDetSg{{"a", "every", "this", "one"}};
constexpr std::array<const char*, 4> kDetPl{{"some", "many", "these", "two"}};
constexpr std::array<const char*, 5> kAdverbs{{"often", "quickly", "slowly", "today", "again"}};
// clang-format on

template <typename A>
auto pick(Rng& rng, const A& arr) -> decltype(arr[0]) {
    return arr[rng.below(arr.size())];
}

std::string noun_phrase(Rng& rng, bool plural, bool allow_adjective = true) {
    std::string det;
    if (rng.uniform() < 0.35) {
        det = "the";
    } else {
        det = plural ? pick(rng, kDetPl) : pick(rng, kDetSg);
    }
    const NounEntry& n = pick(rng, kNouns);
    std::string out = det;
    if (allow_adjective && rng.uniform() < 0.3) {
        out += ' ';
        out += pick(rng, kNeutralAdj);
    }
    out += ' ';
    out += plural ? n.pl : n.sg;
    return out;
}

std::string clause(Rng& rng) {
    const bool plural = rng.uniform() < 0.5;
    const double kind = rng.uniform();
    std::string s;
    if (kind < 0.30) {  // intransitive
        const VerbEntry& v = pick(rng, kIntransVerbs);
        s = noun_phrase(rng, plural) + ' ' + (plural ? v.base : v.third);
        if (rng.uniform() < 0.4) {
            s += ' ';
            s += pick(rng, kAdverbs);
        }
    } else if (kind < 0.60) {  // transitive
        const VerbEntry& v = pick(rng, kTransVerbs);
        const bool obj_plural = rng.uniform() < 0.5;
        s = noun_phrase(rng, plural) + ' ' + (plural ? v.base : v.third) + ' ' +
            noun_phrase(rng, obj_plural);
    } else if (kind < 0.78) {  // copula + polarity adjective
        const bool pos = rng.uniform() < 0.5;
        s = noun_phrase(rng, plural, false) + (plural ? " are " : " is ") +
            (pos ? pick(rng, kPosAdj) : pick(rng, kNegAdj));
    } else if (kind < 0.90) {  // negated
        const VerbEntry& v = pick(rng, kIntransVerbs);
        if (rng.uniform() < 0.5) {
            s = noun_phrase(rng, plural) + (plural ? " do not " : " does not ") + v.base;
        } else {
            s = noun_phrase(rng, plural) + " never " + (plural ? v.base : v.third);
        }
    } else {  // event-chain step (kept coherent for compounds)
        const VerbEntry& v = pick(rng, kEventChain);
        s = noun_phrase(rng, plural, false) + ' ' + (plural ? v.base : v.third);
    }
    return s;
}

}  // namespace

std::vector<int> to_tokens(const std::string& text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(static_cast<int>(static_cast<unsigned char>(c)));
    return out;
}

std::string from_tokens(const std::vector<int>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

std::string sample_sentence(std::uint64_t seed) {
    Rng rng(seed);
    const double kind = rng.uniform();
    std::string s;
    if (kind < 0.70) {
        s = clause(rng);
    } else if (kind < 0.85) {  // coherent event sequence
        const bool plural = rng.uniform() < 0.5;
        std::string np = noun_phrase(rng, plural, false);
        std::size_t i = rng.below(kEventChain.size() - 1);
        std::size_t j = i + 1 + rng.below(kEventChain.size() - 1 - i);
        const auto& v1 = kEventChain[i];
        const auto& v2 = kEventChain[j];
        s = np + ' ' + (plural ? v1.base : v1.third) + " then " + np + ' ' +
            (plural ? v2.base : v2.third);
    } else {  // two clauses, connective matched to polarity when copular
        std::string c1 = clause(rng);
        std::string c2 = clause(rng);
        const char* conn = rng.uniform() < 0.5 ? "and" : "so";
        s = c1 + ' ' + conn + ' ' + c2;
    }
    return s + " .";
}

std::string sample_text(std::uint64_t seed, std::size_t n_tokens) {
    std::string out;
    out.reserve(n_tokens + 64);
    std::uint64_t i = 0;
    while (out.size() < n_tokens) {
        if (!out.empty()) out += ' ';
        out += sample_sentence(derive_seed(seed, "sentence", i++));
    }
    out.resize(n_tokens);
    return out;
}

}  // namespace brainalign::grammar
