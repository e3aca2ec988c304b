#pragma once

#include "pdforge/common.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pdforge {

// Raised when training produces non-finite values; the trainer aborts loudly
// rather than clamping.
struct DivergenceError : ValidationError {
    using ValidationError::ValidationError;
};

// Decoder-only transformer: pre-layer RMSNorm, rotary attention with grouped
// key/value heads, two-matrix GELU FFN, optional tied embeddings.
struct ModelConfig {
    std::uint32_t vocab_size = 256;
    std::uint32_t hidden_size = 64;
    std::uint32_t ffn_hidden_size = 128;
    std::uint32_t num_layers = 2;
    std::uint32_t num_attention_heads = 4;
    std::uint32_t num_query_groups = 2;
    bool tie_embeddings = false;
    std::uint32_t max_seq_len = 32;
    std::uint64_t init_seed = 0;

    void validate() const;
    std::uint32_t head_dim() const { return hidden_size / num_attention_heads; }
    std::uint32_t kv_dim() const { return num_query_groups * head_dim(); }
    std::uint64_t parameter_count() const;

    bool operator==(const ModelConfig&) const = default;
};

// Desk-scale stand-ins for the teacher/student pair.
ModelConfig desk_teacher_config();
ModelConfig desk_student_config();

struct TensorView {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t size() const { return rows * cols; }
};

std::vector<TensorView> build_layout(const ModelConfig& config);

// All parameters live in one flat 64-bit buffer in layout order; Adam moments
// mirror it. Tied embeddings simply omit the head tensor.
struct ModelState {
    ModelConfig config;
    std::vector<double> params;
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::uint64_t adam_step = 0;
    std::vector<TensorView> layout;

    std::span<double> tensor(std::string_view name);
    std::span<const double> tensor(std::string_view name) const;
};

ModelState init_model(const ModelConfig& config);

// Per-sequence activations cached by forward for the exact reverse pass.
template <typename S>
struct SeqActivations {
    struct Layer {
        std::vector<S> h1;        // T x H, post input norm
        std::vector<S> q;         // T x H, post rotary
        std::vector<S> k;         // T x Kv, post rotary
        std::vector<S> v;         // T x Kv
        std::vector<S> probs;     // heads x T x T attention rows (causal)
        std::vector<S> att;       // T x H, heads concatenated, pre out-proj
        std::vector<S> x_attn;    // T x H, residual stream after attention
        std::vector<S> h2;        // T x H, post FFN norm
        std::vector<S> f1;        // T x F, pre-GELU
        std::vector<S> act;       // T x F, post-GELU
        std::vector<S> x_out;     // T x H, residual stream after FFN
        std::vector<S> inv_rms1;  // T
        std::vector<S> inv_rms2;  // T
    };

    std::uint32_t seq_len = 0;
    std::vector<std::uint32_t> tokens;
    std::vector<S> x0;           // T x H embeddings
    std::vector<Layer> layers;
    std::vector<S> x_final;      // T x H post final norm
    std::vector<S> inv_rms_f;    // T
    std::vector<S> logits;       // T x V

    void resize(const ModelConfig& config, std::uint32_t T);
};

using Activations = SeqActivations<double>;

// Kernels are templated on the compute scalar; `params`/`grads` must hold
// parameter_count() entries of S (the trainer casts once per step in f32
// mode). Instantiated for float and double.
template <typename S>
void forward_seq(const ModelConfig& config, const S* params,
                 std::span<const std::uint32_t> tokens, SeqActivations<S>& acts);

template <typename S>
void backward_seq(const ModelConfig& config, const S* params, const SeqActivations<S>& acts,
                  const S* dlogits, S* grads);

// 64-bit convenience wrappers over the kernels above.
void forward(const ModelState& state, std::span<const std::uint32_t> tokens, Activations& acts);
void backward(const ModelState& state, const Activations& acts, std::span<const double> dlogits,
              std::span<double> grads);

// Adam with beta1=0.9, beta2=0.95, eps=1e-8 and bias correction. Throws
// DivergenceError naming the offending tensor on non-finite gradients.
void adam_step(ModelState& state, std::span<const double> grads, double lr);

// Checkpoint: magic "PDCK", version, config, step counter, then params and
// Adam moments as raw little-endian float64, crc32 trailer.
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace pdforge
