#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "brainalign/tensor.hpp"

namespace brainalign {

// Token id reserved for masked-objective input corruption. Synthetic corpora
// only emit printable ASCII, so low ids are never real text.
inline constexpr int kMaskToken = 1;

enum class Objective { causal, masked };

std::string to_string(Objective o);
Objective objective_from_string(const std::string& s);

struct ModelConfig {
    int vocab_size = 256;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int max_seq_len = 128;
    Objective objective = Objective::causal;
    double mask_rate = 0.15;
    int lora_rank = 4;
    double lora_alpha = 4.0;

    void validate() const;
    int head_dim() const { return d_model / n_heads; }
};

// Linear map with an optional low-rank adapter. When the adapter is active
// the base weights are frozen and y = x W + b + (alpha/r) x A B.
struct Linear {
    Tensor weight;  // [in, out]
    Tensor bias;    // [1, out]
    bool has_lora = false;
    Tensor lora_a;  // [in, r]
    Tensor lora_b;  // [r, out]
    double lora_scale = 1.0;

    Tensor forward(const Tensor& x) const;
};

struct TransformerBlock {
    Tensor ln1_gain, ln1_bias;
    Linear qkv;   // [d, 3d]
    Linear proj;  // [d, d]
    Tensor ln2_gain, ln2_bias;
    Linear mlp_fc;    // [d, 4d]
    Linear mlp_proj;  // [4d, d]
};

struct LmForward {
    Tensor loss;                       // scalar mean cross-entropy
    std::vector<Tensor> reps;          // last-block representation per sequence [T_i, d]
    std::size_t n_target_positions{};  // positions contributing to the loss
};

// Small transformer with a language-modeling head, an optional brain mapping
// head on the last-block representation, optional gradient reversal in front
// of the brain head, and optional LoRA adapters on all attention/MLP linears.
class DualHeadModel {
public:
    DualHeadModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Last-block representation of one sequence, [T, d_model]. Tapes the
    // graph when gradients are enabled.
    Tensor encode(const std::vector<int>& ids) const;

    // LM loss over a batch of sequences. Causal: mean next-token
    // cross-entropy over all positions. Masked: mean cross-entropy over the
    // round(mask_rate * T) >= 1 masked positions per sequence, drawn from
    // mask_seed. Representations come from the same graph so a brain head
    // can share the encoder.
    LmForward forward_lm(const std::vector<std::vector<int>>& batch, std::uint64_t mask_seed = 0) const;

    // Brain prediction from per-TR features [n, d_model]. Applies gradient
    // reversal first when grl_lambda is set.
    Tensor forward_brain(const Tensor& tr_features) const;

    void attach_brain_head(int n_voxels, std::uint64_t seed);
    bool has_brain_head() const { return brain_head_.weight.defined(); }
    int n_voxels() const;

    void set_grl_lambda(std::optional<double> lambda);
    std::optional<double> grl_lambda() const { return grl_lambda_; }

    // Freezes every base parameter and attaches zero-initialized adapters.
    void enable_lora(std::uint64_t seed);
    bool lora_enabled() const { return lora_enabled_; }

    // All parameters (used by checkpointing), name -> tensor, fixed order.
    std::vector<std::pair<std::string, Tensor>> parameters() const;
    // Parameters receiving gradients: everything before enable_lora();
    // adapters plus both heads afterwards.
    std::vector<std::pair<std::string, Tensor>> trainable_parameters() const;

    std::size_t parameter_count(bool trainable_only = false) const;

private:
    Tensor run_blocks(const std::vector<int>& ids, bool causal) const;

    ModelConfig cfg_;
    Tensor token_emb_;  // [V, d]
    Tensor pos_emb_;    // [max_seq, d]
    std::vector<TransformerBlock> blocks_;
    Tensor lnf_gain_, lnf_bias_;
    Linear lm_head_;     // [d, V]
    Linear brain_head_;  // [d, n_voxels], attached lazily
    std::optional<double> grl_lambda_;
    bool lora_enabled_ = false;
};

// AdamW with decoupled weight decay; state keyed by parameter order.
struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    AdamW(AdamWConfig cfg, std::vector<std::pair<std::string, Tensor>> params);

    void step();
    void zero_grad();

private:
    AdamWConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::vector<Mat> m_, v_;
    long t_ = 0;
};

// Binary checkpoint: magic, version, JSON config block, then named parameter
// blocks with shapes as little-endian float64. A sidecar "<path>.json" keeps
// the config plus caller-supplied provenance.
void save_checkpoint(const DualHeadModel& model, const std::string& path,
                     const std::map<std::string, std::string>& provenance = {});
DualHeadModel load_checkpoint(const std::string& path);

}  // namespace brainalign
