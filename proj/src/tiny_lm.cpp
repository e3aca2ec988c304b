#include "pdforge/tiny_lm.hpp"

#include "pdforge/binary_io.hpp"
#include "pdforge/rng.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace pdforge {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kRopeBase = 10000.0;
constexpr double kInitStd = 0.02;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.95;
constexpr double kAdamEps = 1e-8;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'P', 'D', 'C', 'K'};

struct LayerOffsets {
    std::size_t ln1, wq, wk, wv, wo, ln2, w1, w2;
};

// Flat-buffer offsets in layout order; `head` aliases `tok_emb` when tied.
struct ParamOffsets {
    std::size_t tok_emb = 0;
    std::vector<LayerOffsets> layers;
    std::size_t final_ln = 0;
    std::size_t head = 0;
    std::size_t total = 0;
};

ParamOffsets param_offsets(const ModelConfig& c) {
    const std::size_t H = c.hidden_size, V = c.vocab_size, F = c.ffn_hidden_size;
    const std::size_t Kv = c.kv_dim();
    ParamOffsets o;
    std::size_t at = 0;
    o.tok_emb = at;
    at += V * H;
    o.layers.resize(c.num_layers);
    for (auto& l : o.layers) {
        l.ln1 = at; at += H;
        l.wq = at; at += H * H;
        l.wk = at; at += H * Kv;
        l.wv = at; at += H * Kv;
        l.wo = at; at += H * H;
        l.ln2 = at; at += H;
        l.w1 = at; at += H * F;
        l.w2 = at; at += F * H;
    }
    o.final_ln = at;
    at += H;
    if (c.tie_embeddings) {
        o.head = o.tok_emb;
    } else {
        o.head = at;
        at += V * H;
    }
    o.total = at;
    return o;
}

// out[T x O] += in[T x I] * W[I x O]
template <typename S>
void mm_acc(S* out, const S* in, const S* w, std::size_t T, std::size_t I, std::size_t O) {
    for (std::size_t t = 0; t < T; ++t) {
        S* orow = out + t * O;
        const S* irow = in + t * I;
        for (std::size_t i = 0; i < I; ++i) {
            const S x = irow[i];
            const S* wrow = w + i * O;
            for (std::size_t o = 0; o < O; ++o) orow[o] += x * wrow[o];
        }
    }
}

// dW[I x O] += in^T[T x I] * dout[T x O]
template <typename S>
void mm_at_b(S* dw, const S* in, const S* dout, std::size_t T, std::size_t I, std::size_t O) {
    for (std::size_t t = 0; t < T; ++t) {
        const S* irow = in + t * I;
        const S* drow = dout + t * O;
        for (std::size_t i = 0; i < I; ++i) {
            const S x = irow[i];
            S* dwrow = dw + i * O;
            for (std::size_t o = 0; o < O; ++o) dwrow[o] += x * drow[o];
        }
    }
}

// din[T x I] += dout[T x O] * W^T
template <typename S>
void mm_b_wt(S* din, const S* dout, const S* w, std::size_t T, std::size_t I, std::size_t O) {
    for (std::size_t t = 0; t < T; ++t) {
        S* irow = din + t * I;
        const S* drow = dout + t * O;
        for (std::size_t i = 0; i < I; ++i) {
            const S* wrow = w + i * O;
            S acc = 0;
            for (std::size_t o = 0; o < O; ++o) acc += drow[o] * wrow[o];
            irow[i] += acc;
        }
    }
}

template <typename S>
void rmsnorm_fwd(S* y, S* inv_rms, const S* x, const S* w, std::size_t T, std::size_t H) {
    for (std::size_t t = 0; t < T; ++t) {
        const S* xr = x + t * H;
        S mean_sq = 0;
        for (std::size_t i = 0; i < H; ++i) mean_sq += xr[i] * xr[i];
        mean_sq /= static_cast<S>(H);
        const S r = S(1) / std::sqrt(mean_sq + static_cast<S>(kRmsEps));
        inv_rms[t] = r;
        S* yr = y + t * H;
        for (std::size_t i = 0; i < H; ++i) yr[i] = xr[i] * w[i] * r;
    }
}

template <typename S>
void rmsnorm_bwd(S* dx, S* dw, const S* dy, const S* x, const S* w, const S* inv_rms,
                 std::size_t T, std::size_t H) {
    for (std::size_t t = 0; t < T; ++t) {
        const S* dyr = dy + t * H;
        const S* xr = x + t * H;
        const S r = inv_rms[t];
        S dot = 0;
        for (std::size_t i = 0; i < H; ++i) {
            dot += dyr[i] * w[i] * xr[i];
            dw[i] += dyr[i] * xr[i] * r;
        }
        const S scale = dot * r * r * r / static_cast<S>(H);
        S* dxr = dx + t * H;
        for (std::size_t i = 0; i < H; ++i) dxr[i] += dyr[i] * w[i] * r - xr[i] * scale;
    }
}

// In-place rotary embedding over `heads` heads of dimension `hd` at row
// stride `dim`; direction +1 forward, -1 for the transposed backward map.
template <typename S>
void rope_apply(S* x, std::size_t T, std::size_t heads, std::size_t hd, std::size_t dim,
                int direction) {
    const std::size_t half = hd / 2;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq =
                std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
            const double angle = static_cast<double>(t) * freq * direction;
            const S c = static_cast<S>(std::cos(angle));
            const S s = static_cast<S>(std::sin(angle));
            for (std::size_t h = 0; h < heads; ++h) {
                S* pair = x + t * dim + h * hd + 2 * i;
                const S a = pair[0], b = pair[1];
                pair[0] = a * c - b * s;
                pair[1] = a * s + b * c;
            }
        }
    }
}

template <typename S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * static_cast<S>(M_SQRT1_2)));
}

template <typename S>
S gelu_grad(S x) {
    const S phi = static_cast<S>(0.3989422804014327) * std::exp(S(-0.5) * x * x);
    const S cdf = S(0.5) * (S(1) + std::erf(x * static_cast<S>(M_SQRT1_2)));
    return cdf + x * phi;
}

void append_tensor(std::vector<TensorView>& out, std::string name, std::size_t& at,
                   std::size_t rows, std::size_t cols) {
    out.push_back(TensorView{std::move(name), at, rows, cols});
    at += rows * cols;
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ValidationError("vocab_size must be >= 2");
    if (hidden_size < 1 || ffn_hidden_size < 1) throw ValidationError("hidden sizes must be positive");
    if (num_layers < 1) throw ValidationError("num_layers must be >= 1");
    if (num_attention_heads < 1 || num_query_groups < 1)
        throw ValidationError("head counts must be positive");
    if (hidden_size % num_attention_heads != 0)
        throw ValidationError("hidden_size must be divisible by num_attention_heads");
    if (num_attention_heads % num_query_groups != 0)
        throw ValidationError("num_attention_heads must be divisible by num_query_groups");
    if (head_dim() % 2 != 0)
        throw ValidationError("head dimension must be even for rotary embeddings");
    if (max_seq_len < 1) throw ValidationError("max_seq_len must be >= 1");
}

std::uint64_t ModelConfig::parameter_count() const {
    return param_offsets(*this).total;
}

ModelConfig desk_teacher_config() {
    ModelConfig c;
    c.vocab_size = 256;
    c.hidden_size = 128;
    c.ffn_hidden_size = 256;
    c.num_layers = 4;
    c.num_attention_heads = 4;
    c.num_query_groups = 2;
    c.max_seq_len = 32;
    return c;
}

ModelConfig desk_student_config() {
    ModelConfig c;
    c.vocab_size = 256;
    c.hidden_size = 64;
    c.ffn_hidden_size = 128;
    c.num_layers = 2;
    c.num_attention_heads = 4;
    c.num_query_groups = 2;
    c.max_seq_len = 32;
    return c;
}

std::vector<TensorView> build_layout(const ModelConfig& c) {
    c.validate();
    std::vector<TensorView> out;
    std::size_t at = 0;
    append_tensor(out, "tok_emb", at, c.vocab_size, c.hidden_size);
    for (std::uint32_t l = 0; l < c.num_layers; ++l) {
        const std::string p = "L" + std::to_string(l) + ".";
        append_tensor(out, p + "ln1", at, 1, c.hidden_size);
        append_tensor(out, p + "wq", at, c.hidden_size, c.hidden_size);
        append_tensor(out, p + "wk", at, c.hidden_size, c.kv_dim());
        append_tensor(out, p + "wv", at, c.hidden_size, c.kv_dim());
        append_tensor(out, p + "wo", at, c.hidden_size, c.hidden_size);
        append_tensor(out, p + "ln2", at, 1, c.hidden_size);
        append_tensor(out, p + "w1", at, c.hidden_size, c.ffn_hidden_size);
        append_tensor(out, p + "w2", at, c.ffn_hidden_size, c.hidden_size);
    }
    append_tensor(out, "final_ln", at, 1, c.hidden_size);
    if (!c.tie_embeddings) append_tensor(out, "head", at, c.vocab_size, c.hidden_size);
    return out;
}

std::span<double> ModelState::tensor(std::string_view name) {
    for (const auto& t : layout) {
        if (t.name == name) return std::span<double>(params).subspan(t.offset, t.size());
    }
    throw ValidationError("unknown tensor: " + std::string(name));
}

std::span<const double> ModelState::tensor(std::string_view name) const {
    for (const auto& t : layout) {
        if (t.name == name) return std::span<const double>(params).subspan(t.offset, t.size());
    }
    throw ValidationError("unknown tensor: " + std::string(name));
}

ModelState init_model(const ModelConfig& config) {
    config.validate();
    ModelState state;
    state.config = config;
    state.layout = build_layout(config);
    const std::size_t total = param_offsets(config).total;
    state.params.resize(total);
    state.adam_m.assign(total, 0.0);
    state.adam_v.assign(total, 0.0);

    Rng rng(split_seed(config.init_seed, 0x1717));
    const double residual_std =
        kInitStd / std::sqrt(2.0 * static_cast<double>(config.num_layers));
    for (const auto& view : state.layout) {
        auto data = std::span<double>(state.params).subspan(view.offset, view.size());
        const auto dot_pos = view.name.find('.');
        const std::string_view leaf =
            dot_pos == std::string::npos ? std::string_view(view.name)
                                         : std::string_view(view.name).substr(dot_pos + 1);
        if (leaf == "ln1" || leaf == "ln2" || leaf == "final_ln") {
            for (double& v : data) v = 1.0;
        } else if (leaf == "wo" || leaf == "w2") {
            // Residual-writing projections get the depth-scaled init.
            for (double& v : data) v = rng.normal(0.0, residual_std);
        } else {
            for (double& v : data) v = rng.normal(0.0, kInitStd);
        }
    }
    return state;
}

template <typename S>
void SeqActivations<S>::resize(const ModelConfig& c, std::uint32_t T) {
    seq_len = T;
    const std::size_t H = c.hidden_size, F = c.ffn_hidden_size, Kv = c.kv_dim();
    const std::size_t nh = c.num_attention_heads;
    tokens.assign(T, 0);
    x0.assign(T * H, S(0));
    layers.resize(c.num_layers);
    for (auto& l : layers) {
        l.h1.assign(T * H, S(0));
        l.q.assign(T * H, S(0));
        l.k.assign(T * Kv, S(0));
        l.v.assign(T * Kv, S(0));
        l.probs.assign(nh * T * T, S(0));
        l.att.assign(T * H, S(0));
        l.x_attn.assign(T * H, S(0));
        l.h2.assign(T * H, S(0));
        l.f1.assign(T * F, S(0));
        l.act.assign(T * F, S(0));
        l.x_out.assign(T * H, S(0));
        l.inv_rms1.assign(T, S(0));
        l.inv_rms2.assign(T, S(0));
    }
    x_final.assign(T * H, S(0));
    inv_rms_f.assign(T, S(0));
    logits.assign(T * c.vocab_size, S(0));
}

template struct SeqActivations<float>;
template struct SeqActivations<double>;

template <typename S>
void forward_seq(const ModelConfig& c, const S* params, std::span<const std::uint32_t> tokens,
                 SeqActivations<S>& acts) {
    const std::uint32_t T = static_cast<std::uint32_t>(tokens.size());
    if (T == 0) throw ValidationError("forward requires a non-empty sequence");
    if (T > c.max_seq_len) throw ValidationError("sequence exceeds max_seq_len");
    for (std::uint32_t tok : tokens) {
        if (tok >= c.vocab_size) throw ValidationError("token id out of vocabulary range");
    }
    const ParamOffsets off = param_offsets(c);
    const std::size_t H = c.hidden_size, F = c.ffn_hidden_size, V = c.vocab_size;
    const std::size_t Kv = c.kv_dim(), hd = c.head_dim();
    const std::size_t nh = c.num_attention_heads, ng = c.num_query_groups;
    const std::size_t hpg = nh / ng;
    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(hd)));

    acts.resize(c, T);
    std::copy(tokens.begin(), tokens.end(), acts.tokens.begin());

    for (std::uint32_t t = 0; t < T; ++t) {
        const S* row = params + off.tok_emb + static_cast<std::size_t>(tokens[t]) * H;
        std::copy(row, row + H, acts.x0.begin() + t * H);
    }

    const S* x_in = acts.x0.data();
    for (std::uint32_t li = 0; li < c.num_layers; ++li) {
        auto& l = acts.layers[li];
        const auto& lo = off.layers[li];

        rmsnorm_fwd(l.h1.data(), l.inv_rms1.data(), x_in, params + lo.ln1, T, H);
        mm_acc(l.q.data(), l.h1.data(), params + lo.wq, T, H, H);
        mm_acc(l.k.data(), l.h1.data(), params + lo.wk, T, H, Kv);
        mm_acc(l.v.data(), l.h1.data(), params + lo.wv, T, H, Kv);
        rope_apply(l.q.data(), T, nh, hd, H, +1);
        rope_apply(l.k.data(), T, ng, hd, Kv, +1);

        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t g = h / hpg;
            S* probs = l.probs.data() + h * T * T;
            for (std::uint32_t t = 0; t < T; ++t) {
                const S* qrow = l.q.data() + t * H + h * hd;
                S* prow = probs + t * T;
                S max = -std::numeric_limits<S>::infinity();
                for (std::uint32_t s = 0; s <= t; ++s) {
                    const S* krow = l.k.data() + s * Kv + g * hd;
                    S acc = 0;
                    for (std::size_t d = 0; d < hd; ++d) acc += qrow[d] * krow[d];
                    prow[s] = acc * scale;
                    max = std::max(max, prow[s]);
                }
                S sum = 0;
                for (std::uint32_t s = 0; s <= t; ++s) {
                    prow[s] = std::exp(prow[s] - max);
                    sum += prow[s];
                }
                for (std::uint32_t s = 0; s <= t; ++s) prow[s] /= sum;
                S* arow = l.att.data() + t * H + h * hd;
                for (std::uint32_t s = 0; s <= t; ++s) {
                    const S p = prow[s];
                    const S* vrow = l.v.data() + s * Kv + g * hd;
                    for (std::size_t d = 0; d < hd; ++d) arow[d] += p * vrow[d];
                }
            }
        }

        std::copy(x_in, x_in + T * H, l.x_attn.begin());
        mm_acc(l.x_attn.data(), l.att.data(), params + lo.wo, T, H, H);

        rmsnorm_fwd(l.h2.data(), l.inv_rms2.data(), l.x_attn.data(), params + lo.ln2, T, H);
        mm_acc(l.f1.data(), l.h2.data(), params + lo.w1, T, H, F);
        for (std::size_t i = 0; i < l.f1.size(); ++i) l.act[i] = gelu(l.f1[i]);
        std::copy(l.x_attn.begin(), l.x_attn.end(), l.x_out.begin());
        mm_acc(l.x_out.data(), l.act.data(), params + lo.w2, T, F, H);

        x_in = l.x_out.data();
    }

    rmsnorm_fwd(acts.x_final.data(), acts.inv_rms_f.data(), x_in, params + off.final_ln, T, H);
    for (std::uint32_t t = 0; t < T; ++t) {
        const S* xr = acts.x_final.data() + t * H;
        S* lrow = acts.logits.data() + t * V;
        for (std::size_t v = 0; v < V; ++v) {
            const S* hrow = params + off.head + v * H;
            S acc = 0;
            for (std::size_t i = 0; i < H; ++i) acc += xr[i] * hrow[i];
            lrow[v] = acc;
        }
    }
}

template <typename S>
void backward_seq(const ModelConfig& c, const S* params, const SeqActivations<S>& acts,
                  const S* dlogits, S* grads) {
    const std::uint32_t T = acts.seq_len;
    if (T == 0) throw ValidationError("backward requires forward activations");
    const ParamOffsets off = param_offsets(c);
    const std::size_t H = c.hidden_size, F = c.ffn_hidden_size, V = c.vocab_size;
    const std::size_t Kv = c.kv_dim(), hd = c.head_dim();
    const std::size_t nh = c.num_attention_heads, ng = c.num_query_groups;
    const std::size_t hpg = nh / ng;
    const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(hd)));

    std::vector<S> dx_final(T * H, S(0));
    for (std::uint32_t t = 0; t < T; ++t) {
        const S* drow = dlogits + t * V;
        const S* xr = acts.x_final.data() + t * H;
        S* dxr = dx_final.data() + t * H;
        for (std::size_t v = 0; v < V; ++v) {
            const S g = drow[v];
            const S* hrow = params + off.head + v * H;
            S* dhrow = grads + off.head + v * H;
            for (std::size_t i = 0; i < H; ++i) {
                dxr[i] += g * hrow[i];
                dhrow[i] += g * xr[i];
            }
        }
    }

    const S* x_top = c.num_layers > 0 ? acts.layers[c.num_layers - 1].x_out.data()
                                      : acts.x0.data();
    std::vector<S> dx(T * H, S(0));
    rmsnorm_bwd(dx.data(), grads + off.final_ln, dx_final.data(), x_top,
                params + off.final_ln, acts.inv_rms_f.data(), T, H);

    std::vector<S> dact(T * F), df1(T * F), dh2(T * H), dx_attn(T * H);
    std::vector<S> datt(T * H), dq(T * H), dk(T * Kv), dv(T * Kv), dh1(T * H);
    std::vector<S> dscores(T * T);

    for (std::uint32_t li = c.num_layers; li-- > 0;) {
        const auto& l = acts.layers[li];
        const auto& lo = off.layers[li];
        const S* x_in = li == 0 ? acts.x0.data() : acts.layers[li - 1].x_out.data();

        // FFN block: x_out = x_attn + gelu(h2 W1) W2
        std::fill(dact.begin(), dact.end(), S(0));
        mm_b_wt(dact.data(), dx.data(), params + lo.w2, T, F, H);
        mm_at_b(grads + lo.w2, l.act.data(), dx.data(), T, F, H);
        for (std::size_t i = 0; i < df1.size(); ++i) df1[i] = dact[i] * gelu_grad(l.f1[i]);
        std::fill(dh2.begin(), dh2.end(), S(0));
        mm_b_wt(dh2.data(), df1.data(), params + lo.w1, T, H, F);
        mm_at_b(grads + lo.w1, l.h2.data(), df1.data(), T, H, F);
        dx_attn = dx;  // residual path
        rmsnorm_bwd(dx_attn.data(), grads + lo.ln2, dh2.data(), l.x_attn.data(),
                    params + lo.ln2, l.inv_rms2.data(), T, H);

        // Attention block: x_attn = x_in + att Wo
        std::fill(datt.begin(), datt.end(), S(0));
        mm_b_wt(datt.data(), dx_attn.data(), params + lo.wo, T, H, H);
        mm_at_b(grads + lo.wo, l.att.data(), dx_attn.data(), T, H, H);

        std::fill(dq.begin(), dq.end(), S(0));
        std::fill(dk.begin(), dk.end(), S(0));
        std::fill(dv.begin(), dv.end(), S(0));
        for (std::size_t h = 0; h < nh; ++h) {
            const std::size_t g = h / hpg;
            const S* probs = l.probs.data() + h * T * T;
            for (std::uint32_t t = 0; t < T; ++t) {
                const S* arow = datt.data() + t * H + h * hd;
                const S* prow = probs + t * T;
                S* srow = dscores.data() + t * T;
                S dot_pp = 0;
                for (std::uint32_t s = 0; s <= t; ++s) {
                    const S* vrow = l.v.data() + s * Kv + g * hd;
                    S dp = 0;
                    for (std::size_t d = 0; d < hd; ++d) dp += arow[d] * vrow[d];
                    srow[s] = dp;
                    dot_pp += prow[s] * dp;
                    S* dvrow = dv.data() + s * Kv + g * hd;
                    const S p = prow[s];
                    for (std::size_t d = 0; d < hd; ++d) dvrow[d] += p * arow[d];
                }
                for (std::uint32_t s = 0; s <= t; ++s) {
                    const S ds = prow[s] * (srow[s] - dot_pp) * scale;
                    const S* krow = l.k.data() + s * Kv + g * hd;
                    const S* qrow = l.q.data() + t * H + h * hd;
                    S* dqrow = dq.data() + t * H + h * hd;
                    S* dkrow = dk.data() + s * Kv + g * hd;
                    for (std::size_t d = 0; d < hd; ++d) {
                        dqrow[d] += ds * krow[d];
                        dkrow[d] += ds * qrow[d];
                    }
                }
            }
        }
        rope_apply(dq.data(), T, nh, hd, H, -1);
        rope_apply(dk.data(), T, ng, hd, Kv, -1);

        std::fill(dh1.begin(), dh1.end(), S(0));
        mm_at_b(grads + lo.wq, l.h1.data(), dq.data(), T, H, H);
        mm_b_wt(dh1.data(), dq.data(), params + lo.wq, T, H, H);
        mm_at_b(grads + lo.wk, l.h1.data(), dk.data(), T, H, Kv);
        mm_b_wt(dh1.data(), dk.data(), params + lo.wk, T, H, Kv);
        mm_at_b(grads + lo.wv, l.h1.data(), dv.data(), T, H, Kv);
        mm_b_wt(dh1.data(), dv.data(), params + lo.wv, T, H, Kv);

        dx = dx_attn;  // residual path into the attention input
        rmsnorm_bwd(dx.data(), grads + lo.ln1, dh1.data(), x_in, params + lo.ln1,
                    l.inv_rms1.data(), T, H);
    }

    for (std::uint32_t t = 0; t < T; ++t) {
        S* erow = grads + off.tok_emb + static_cast<std::size_t>(acts.tokens[t]) * H;
        const S* dxr = dx.data() + t * H;
        for (std::size_t i = 0; i < H; ++i) erow[i] += dxr[i];
    }
}

template void forward_seq<float>(const ModelConfig&, const float*,
                                 std::span<const std::uint32_t>, SeqActivations<float>&);
template void forward_seq<double>(const ModelConfig&, const double*,
                                  std::span<const std::uint32_t>, SeqActivations<double>&);
template void backward_seq<float>(const ModelConfig&, const float*, const SeqActivations<float>&,
                                  const float*, float*);
template void backward_seq<double>(const ModelConfig&, const double*,
                                   const SeqActivations<double>&, const double*, double*);

void forward(const ModelState& state, std::span<const std::uint32_t> tokens, Activations& acts) {
    forward_seq<double>(state.config, state.params.data(), tokens, acts);
}

void backward(const ModelState& state, const Activations& acts, std::span<const double> dlogits,
              std::span<double> grads) {
    if (dlogits.size() != acts.logits.size())
        throw ValidationError("dlogits shape does not match forward logits");
    if (grads.size() != state.params.size())
        throw ValidationError("gradient buffer size does not match parameter count");
    backward_seq<double>(state.config, state.params.data(), acts, dlogits.data(), grads.data());
}

void adam_step(ModelState& state, std::span<const double> grads, double lr) {
    if (grads.size() != state.params.size())
        throw ValidationError("gradient size does not match parameter count");
    if (!(lr >= 0.0) || !std::isfinite(lr))
        throw ValidationError("learning rate must be non-negative");
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(grads[i])) {
            for (const auto& view : state.layout) {
                if (i >= view.offset && i < view.offset + view.size())
                    throw DivergenceError("non-finite gradient in tensor " + view.name);
            }
            throw DivergenceError("non-finite gradient");
        }
    }
    state.adam_step += 1;
    const double t = static_cast<double>(state.adam_step);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double g = grads[i];
        state.adam_m[i] = kAdamBeta1 * state.adam_m[i] + (1.0 - kAdamBeta1) * g;
        state.adam_v[i] = kAdamBeta2 * state.adam_v[i] + (1.0 - kAdamBeta2) * g * g;
        const double mhat = state.adam_m[i] / bc1;
        const double vhat = state.adam_v[i] / bc2;
        state.params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
    ByteWriter w;
    w.put_bytes(kCheckpointMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    const ModelConfig& c = state.config;
    w.put<std::uint32_t>(c.vocab_size);
    w.put<std::uint32_t>(c.hidden_size);
    w.put<std::uint32_t>(c.ffn_hidden_size);
    w.put<std::uint32_t>(c.num_layers);
    w.put<std::uint32_t>(c.num_attention_heads);
    w.put<std::uint32_t>(c.num_query_groups);
    w.put<std::uint8_t>(c.tie_embeddings ? 1 : 0);
    w.put<std::uint32_t>(c.max_seq_len);
    w.put<std::uint64_t>(c.init_seed);
    w.put<std::uint64_t>(state.adam_step);
    w.put_bytes(state.params.data(), state.params.size() * sizeof(double));
    w.put_bytes(state.adam_m.data(), state.adam_m.size() * sizeof(double));
    w.put_bytes(state.adam_v.data(), state.adam_v.size() * sizeof(double));
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0ul, reinterpret_cast<const Bytef*>(w.bytes().data()),
                static_cast<uInt>(w.size())));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open checkpoint for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(w.bytes().data()),
              static_cast<std::streamsize>(w.size()));
    out.write(reinterpret_cast<const char*>(&crc), sizeof(crc));
    out.flush();
    if (!out) throw StorageError("failed writing checkpoint: " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot open checkpoint: " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 4 + sizeof(std::uint32_t) * 2)
        throw CorruptionError("checkpoint too short: " + path.string());
    std::uint32_t stored_crc = 0;
    std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0ul, reinterpret_cast<const Bytef*>(buf.data()),
                static_cast<uInt>(buf.size() - 4)));
    if (crc != stored_crc) throw CorruptionError("checkpoint crc mismatch: " + path.string());
    if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
        throw CorruptionError("bad checkpoint magic: " + path.string());

    ByteReader r(buf.data() + 4, buf.size() - 8);
    std::uint32_t version = 0;
    r.get(version);
    if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version");
    ModelConfig c;
    std::uint8_t tie = 0;
    r.get(c.vocab_size);
    r.get(c.hidden_size);
    r.get(c.ffn_hidden_size);
    r.get(c.num_layers);
    r.get(c.num_attention_heads);
    r.get(c.num_query_groups);
    r.get(tie);
    r.get(c.max_seq_len);
    r.get(c.init_seed);
    c.tie_embeddings = tie != 0;
    c.validate();

    ModelState state;
    state.config = c;
    state.layout = build_layout(c);
    if (!r.get(state.adam_step)) throw CorruptionError("truncated checkpoint header");
    const std::size_t total = param_offsets(c).total;
    if (r.remaining() != 3 * total * sizeof(double))
        throw ValidationError("checkpoint tensor payload does not match the stored config");
    const std::uint8_t* tensors = buf.data() + (buf.size() - 4) - 3 * total * sizeof(double);
    state.params.resize(total);
    state.adam_m.resize(total);
    state.adam_v.resize(total);
    std::memcpy(state.params.data(), tensors, total * sizeof(double));
    std::memcpy(state.adam_m.data(), tensors + total * sizeof(double), total * sizeof(double));
    std::memcpy(state.adam_v.data(), tensors + 2 * total * sizeof(double),
                total * sizeof(double));
    for (double v : state.params) {
        if (!std::isfinite(v)) throw CorruptionError("non-finite parameter in checkpoint");
    }
    return state;
}

ModelState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
    ModelState state = load_checkpoint(path);
    if (!(state.config == expected))
        throw ValidationError("checkpoint config does not match the expected model config");
    return state;
}

}  // namespace pdforge
