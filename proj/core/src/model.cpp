#include "brainalign/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "brainalign/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint and recording formats assume a little-endian host");

namespace brainalign {

using nlohmann::json;

std::string to_string(Objective o) { return o == Objective::causal ? "causal" : "masked"; }

Objective objective_from_string(const std::string& s) {
    if (s == "causal") return Objective::causal;
    if (s == "masked") return Objective::masked;
    throw ConfigError("unknown objective '" + s + "' (expected causal|masked)");
}

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || max_seq_len <= 0)
        throw ConfigError("model dimensions must be positive");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ConfigError("mask_rate must lie in (0, 1)");
    if (lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = add_rowvec(matmul(x, weight), bias);
    if (has_lora) y = add(y, mul_scalar(matmul(matmul(x, lora_a), lora_b), lora_scale));
    return y;
}

namespace {

Tensor init_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::uint64_t seed) {
    Rng rng(seed);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.gaussian(0.0, stddev);
    return Tensor::leaf(std::move(m), true);
}

Tensor init_zeros(Eigen::Index rows, Eigen::Index cols) {
    return Tensor::leaf(Mat::Zero(rows, cols), true);
}

Tensor init_ones_row(Eigen::Index cols) { return Tensor::leaf(Mat::Ones(1, cols), true); }

Linear make_linear(int in, int out, std::uint64_t seed) {
    Linear l;
    l.weight = init_matrix(in, out, 0.02, seed);
    l.bias = init_zeros(1, out);
    return l;
}

void set_requires_grad(const Tensor& t, bool value) { t.node()->requires_grad = value; }

void add_lora(Linear& l, int rank, double alpha, std::uint64_t seed) {
    const auto in = l.weight.rows();
    const auto out = l.weight.cols();
    l.has_lora = true;
    // Zero B keeps the adapted map identical to the base map at step 0.
    l.lora_a = init_matrix(in, rank, 1.0 / static_cast<double>(rank), seed);
    l.lora_b = init_zeros(rank, out);
    l.lora_scale = alpha / static_cast<double>(rank);
    set_requires_grad(l.weight, false);
    set_requires_grad(l.bias, false);
}

Mat causal_mask(Eigen::Index t) {
    Mat m = Mat::Zero(t, t);
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = 1.0;
    return m;
}

}  // namespace

DualHeadModel::DualHeadModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    token_emb_ = init_matrix(cfg_.vocab_size, cfg_.d_model, 0.02, derive_seed(seed, "tok_emb"));
    pos_emb_ = init_matrix(cfg_.max_seq_len, cfg_.d_model, 0.02, derive_seed(seed, "pos_emb"));
    blocks_.resize(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l) {
        auto& b = blocks_[static_cast<std::size_t>(l)];
        const std::uint64_t ls = derive_seed(seed, "block", static_cast<std::uint64_t>(l));
        b.ln1_gain = init_ones_row(cfg_.d_model);
        b.ln1_bias = init_zeros(1, cfg_.d_model);
        b.ln2_gain = init_ones_row(cfg_.d_model);
        b.ln2_bias = init_zeros(1, cfg_.d_model);
        b.qkv = make_linear(cfg_.d_model, 3 * cfg_.d_model, derive_seed(ls, "qkv"));
        b.proj = make_linear(cfg_.d_model, cfg_.d_model, derive_seed(ls, "proj"));
        b.mlp_fc = make_linear(cfg_.d_model, 4 * cfg_.d_model, derive_seed(ls, "mlp_fc"));
        b.mlp_proj = make_linear(4 * cfg_.d_model, cfg_.d_model, derive_seed(ls, "mlp_proj"));
    }
    lnf_gain_ = init_ones_row(cfg_.d_model);
    lnf_bias_ = init_zeros(1, cfg_.d_model);
    lm_head_ = make_linear(cfg_.d_model, cfg_.vocab_size, derive_seed(seed, "lm_head"));
}

Tensor DualHeadModel::run_blocks(const std::vector<int>& ids, bool causal) const {
    const auto t = static_cast<Eigen::Index>(ids.size());
    if (t == 0) throw ContractError("encode: empty sequence");
    if (t > cfg_.max_seq_len) throw ContractError("encode: sequence exceeds max_seq_len");
    for (int id : ids)
        if (id < 0 || id >= cfg_.vocab_size) throw ContractError("encode: token id out of range");

    std::vector<int> positions(ids.size());
    std::iota(positions.begin(), positions.end(), 0);

    Tensor x = add(embedding(token_emb_, ids), embedding(pos_emb_, positions));
    const int hd = cfg_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const Mat mask = causal ? causal_mask(t) : Mat();

    for (const auto& blk : blocks_) {
        Tensor h = layer_norm_rows(x, blk.ln1_gain, blk.ln1_bias);
        Tensor qkv = blk.qkv.forward(h);
        std::vector<Tensor> heads;
        heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
        for (int hh = 0; hh < cfg_.n_heads; ++hh) {
            Tensor q = block(qkv, 0, t, hh * hd, hd);
            Tensor k = block(qkv, 0, t, cfg_.d_model + hh * hd, hd);
            Tensor v = block(qkv, 0, t, 2 * cfg_.d_model + hh * hd, hd);
            Tensor scores = mul_scalar(matmul(q, transpose(k)), scale);
            Tensor probs = softmax_rows(scores, causal ? &mask : nullptr);
            heads.push_back(matmul(probs, v));
        }
        x = add(x, blk.proj.forward(concat_cols(heads)));
        Tensor h2 = layer_norm_rows(x, blk.ln2_gain, blk.ln2_bias);
        x = add(x, blk.mlp_proj.forward(gelu(blk.mlp_fc.forward(h2))));
    }
    return x;  // representation tap: after the final block, before lnf
}

Tensor DualHeadModel::encode(const std::vector<int>& ids) const {
    return run_blocks(ids, cfg_.objective == Objective::causal);
}

LmForward DualHeadModel::forward_lm(const std::vector<std::vector<int>>& batch, std::uint64_t mask_seed) const {
    if (batch.empty()) throw ContractError("forward_lm: empty batch");

    LmForward out;
    out.reps.reserve(batch.size());
    std::vector<Tensor> losses;
    std::vector<double> weights;

    for (std::size_t s = 0; s < batch.size(); ++s) {
        const auto& ids = batch[s];
        if (cfg_.objective == Objective::causal) {
            if (ids.size() < 2) throw ContractError("forward_lm: causal sequence needs >= 2 tokens");
            Tensor rep = run_blocks(ids, true);
            out.reps.push_back(rep);
            Tensor logits = lm_head_.forward(layer_norm_rows(rep, lnf_gain_, lnf_bias_));
            const auto t = static_cast<Eigen::Index>(ids.size());
            Tensor pred = block(logits, 0, t - 1, 0, cfg_.vocab_size);
            std::vector<int> targets(ids.begin() + 1, ids.end());
            losses.push_back(cross_entropy_mean(pred, targets));
            weights.push_back(static_cast<double>(targets.size()));
            out.n_target_positions += targets.size();
        } else {
            const auto t = ids.size();
            auto n_mask = static_cast<std::size_t>(std::lround(cfg_.mask_rate * static_cast<double>(t)));
            n_mask = std::max<std::size_t>(1, std::min(n_mask, t));
            Rng rng(derive_seed(mask_seed, "mask", s));
            std::vector<std::size_t> order = rng.permutation(t);
            std::vector<int> masked_positions(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_mask));
            std::sort(masked_positions.begin(), masked_positions.end());

            std::vector<int> corrupted = ids;
            std::vector<int> targets;
            targets.reserve(n_mask);
            for (int p : masked_positions) {
                targets.push_back(ids[static_cast<std::size_t>(p)]);
                corrupted[static_cast<std::size_t>(p)] = kMaskToken;
            }
            Tensor rep = run_blocks(corrupted, false);
            out.reps.push_back(rep);
            Tensor logits = lm_head_.forward(layer_norm_rows(rep, lnf_gain_, lnf_bias_));
            Tensor pred = select_rows(logits, masked_positions);
            losses.push_back(cross_entropy_mean(pred, targets));
            weights.push_back(static_cast<double>(n_mask));
            out.n_target_positions += n_mask;
        }
    }

    // Flat mean over every target position in the batch.
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    Tensor acc = mul_scalar(losses[0], weights[0] / total);
    for (std::size_t i = 1; i < losses.size(); ++i)
        acc = add(acc, mul_scalar(losses[i], weights[i] / total));
    out.loss = acc;
    return out;
}

Tensor DualHeadModel::forward_brain(const Tensor& tr_features) const {
    if (!has_brain_head()) throw ConfigError("forward_brain: no brain head attached");
    if (tr_features.cols() != cfg_.d_model)
        throw ContractError("forward_brain: feature width must equal d_model");
    Tensor x = tr_features;
    if (grl_lambda_) x = grl(x, *grl_lambda_);
    return brain_head_.forward(x);
}

void DualHeadModel::attach_brain_head(int n_voxels, std::uint64_t seed) {
    if (n_voxels <= 0) throw ConfigError("attach_brain_head: voxel count must be positive");
    // Nonzero init: a constant-output head has degenerate batch correlation
    // and would never receive a usable training signal.
    brain_head_.weight = init_matrix(cfg_.d_model, n_voxels, 0.05, derive_seed(seed, "brain_head_w"));
    brain_head_.bias = init_zeros(1, n_voxels);
}

int DualHeadModel::n_voxels() const {
    if (!has_brain_head()) throw ConfigError("n_voxels: no brain head attached");
    return static_cast<int>(brain_head_.weight.cols());
}

void DualHeadModel::set_grl_lambda(std::optional<double> lambda) {
    if (lambda && !(*lambda > 0.0)) throw ConfigError("grl lambda must be positive");
    grl_lambda_ = lambda;
}

void DualHeadModel::enable_lora(std::uint64_t seed) {
    if (lora_enabled_) return;
    lora_enabled_ = true;
    set_requires_grad(token_emb_, false);
    set_requires_grad(pos_emb_, false);
    set_requires_grad(lnf_gain_, false);
    set_requires_grad(lnf_bias_, false);
    int idx = 0;
    for (auto& b : blocks_) {
        const std::uint64_t ls = derive_seed(seed, "lora_block", static_cast<std::uint64_t>(idx++));
        set_requires_grad(b.ln1_gain, false);
        set_requires_grad(b.ln1_bias, false);
        set_requires_grad(b.ln2_gain, false);
        set_requires_grad(b.ln2_bias, false);
        add_lora(b.qkv, cfg_.lora_rank, cfg_.lora_alpha, derive_seed(ls, "qkv"));
        add_lora(b.proj, cfg_.lora_rank, cfg_.lora_alpha, derive_seed(ls, "proj"));
        add_lora(b.mlp_fc, cfg_.lora_rank, cfg_.lora_alpha, derive_seed(ls, "mlp_fc"));
        add_lora(b.mlp_proj, cfg_.lora_rank, cfg_.lora_alpha, derive_seed(ls, "mlp_proj"));
    }
}

namespace {

void collect_linear(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                    const Linear& l) {
    out.emplace_back(prefix + ".weight", l.weight);
    out.emplace_back(prefix + ".bias", l.bias);
    if (l.has_lora) {
        out.emplace_back(prefix + ".lora_a", l.lora_a);
        out.emplace_back(prefix + ".lora_b", l.lora_b);
    }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> DualHeadModel::parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("token_emb", token_emb_);
    out.emplace_back("pos_emb", pos_emb_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "block" + std::to_string(l);
        const auto& b = blocks_[l];
        out.emplace_back(p + ".ln1_gain", b.ln1_gain);
        out.emplace_back(p + ".ln1_bias", b.ln1_bias);
        collect_linear(out, p + ".qkv", b.qkv);
        collect_linear(out, p + ".proj", b.proj);
        out.emplace_back(p + ".ln2_gain", b.ln2_gain);
        out.emplace_back(p + ".ln2_bias", b.ln2_bias);
        collect_linear(out, p + ".mlp_fc", b.mlp_fc);
        collect_linear(out, p + ".mlp_proj", b.mlp_proj);
    }
    out.emplace_back("lnf_gain", lnf_gain_);
    out.emplace_back("lnf_bias", lnf_bias_);
    collect_linear(out, "lm_head", lm_head_);
    if (has_brain_head()) collect_linear(out, "brain_head", brain_head_);
    return out;
}

std::vector<std::pair<std::string, Tensor>> DualHeadModel::trainable_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, t] : parameters())
        if (t.requires_grad()) out.emplace_back(name, t);
    return out;
}

std::size_t DualHeadModel::parameter_count(bool trainable_only) const {
    std::size_t n = 0;
    for (auto& [name, t] : trainable_only ? trainable_parameters() : parameters())
        n += static_cast<std::size_t>(t.size());
    return n;
}

// ---------------------------------- AdamW ----------------------------------

AdamW::AdamW(AdamWConfig cfg, std::vector<std::pair<std::string, Tensor>> params)
    : cfg_(cfg), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& [name, t] : params_) {
        m_.push_back(Mat::Zero(t.rows(), t.cols()));
        v_.push_back(Mat::Zero(t.rows(), t.cols()));
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& tensor = params_[i].second;
        const Mat& g = tensor.grad();
        Mat& p = tensor.node()->value;
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const Mat mhat = m_[i] / bc1;
        const Mat vhat = v_[i] / bc2;
        p -= cfg_.lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps)).matrix();
        if (cfg_.weight_decay != 0.0) p -= cfg_.lr * cfg_.weight_decay * p;
    }
}

void AdamW::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

// ------------------------------- checkpointing ------------------------------

namespace {

constexpr char kCkptMagic[8] = {'B', 'A', 'L', 'N', 'C', 'K', 'P', '1'};

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},   {"d_model", c.d_model},
                {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
                {"max_seq_len", c.max_seq_len}, {"objective", to_string(c.objective)},
                {"mask_rate", c.mask_rate},     {"lora_rank", c.lora_rank},
                {"lora_alpha", c.lora_alpha}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.objective = objective_from_string(j.at("objective").get<std::string>());
    c.mask_rate = j.at("mask_rate").get<double>();
    c.lora_rank = j.at("lora_rank").get<int>();
    c.lora_alpha = j.at("lora_alpha").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const DualHeadModel& model, const std::string& path,
                     const std::map<std::string, std::string>& provenance) {
    const auto params = model.parameters();

    json header;
    header["config"] = config_to_json(model.config());
    header["lora_enabled"] = model.lora_enabled();
    header["has_brain_head"] = model.has_brain_head();
    header["n_voxels"] = model.has_brain_head() ? model.n_voxels() : 0;
    if (model.grl_lambda())
        header["grl_lambda"] = *model.grl_lambda();
    else
        header["grl_lambda"] = nullptr;
    json plist = json::array();
    for (auto& [name, t] : params)
        plist.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
    header["params"] = plist;
    const std::string hs = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("save_checkpoint: cannot open " + tmp);
        f.write(kCkptMagic, sizeof(kCkptMagic));
        const auto len = static_cast<std::uint32_t>(hs.size());
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
        for (auto& [name, t] : params)
            f.write(reinterpret_cast<const char*>(t.value().data()),
                    static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
        if (!f) throw FormatError("save_checkpoint: short write to " + tmp);
    }
    std::rename(tmp.c_str(), path.c_str());

    json side;
    side["config"] = header["config"];
    side["lora_enabled"] = header["lora_enabled"];
    side["has_brain_head"] = header["has_brain_head"];
    side["grl_lambda"] = header["grl_lambda"];
    side["provenance"] = provenance;
    std::ofstream sf(path + ".json", std::ios::trunc);
    sf << side.dump(2) << "\n";
}

DualHeadModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("load_checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
        throw FormatError("load_checkpoint: bad magic in " + path);
    std::uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!f) throw FormatError("load_checkpoint: truncated header length");
    std::string hs(len, '\0');
    f.read(hs.data(), len);
    if (!f) throw FormatError("load_checkpoint: truncated header JSON");

    json header = json::parse(hs);
    ModelConfig cfg = config_from_json(header.at("config"));

    DualHeadModel model(cfg, 0);
    if (header.at("lora_enabled").get<bool>()) model.enable_lora(0);
    if (header.at("has_brain_head").get<bool>())
        model.attach_brain_head(header.at("n_voxels").get<int>(), 0);
    if (!header.at("grl_lambda").is_null())
        model.set_grl_lambda(header.at("grl_lambda").get<double>());

    auto params = model.parameters();
    const auto& plist = header.at("params");
    if (plist.size() != params.size())
        throw FormatError("load_checkpoint: parameter list mismatch in " + path);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& rec = plist[i];
        auto& [name, t] = params[i];
        if (rec.at("name").get<std::string>() != name)
            throw FormatError("load_checkpoint: unexpected parameter '" +
                              rec.at("name").get<std::string>() + "', wanted '" + name + "'");
        const auto rows = rec.at("rows").get<Eigen::Index>();
        const auto cols = rec.at("cols").get<Eigen::Index>();
        if (rows != t.rows() || cols != t.cols())
            throw FormatError("load_checkpoint: shape mismatch for parameter '" + name + "'");
        f.read(reinterpret_cast<char*>(t.node()->value.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
        if (!f) throw FormatError("load_checkpoint: payload truncated at parameter '" + name + "'");
    }
    return model;
}

}  // namespace brainalign
