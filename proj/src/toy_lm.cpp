// Copyright (c) 2026, fpvec authors
// SPDX-License-Identifier: Apache-2.0
//

#include "fpvec/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

#include <fmt/core.h>
#include <nlohmann/json.hpp>

#include "fpvec/parallel.hpp"
#include "fpvec/rng.hpp"

namespace fpvec::toylm {

using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using ConstMat = Eigen::Map<const Matrix>;
using MutMat = Eigen::Map<Matrix>;
using ConstVec = Eigen::Map<const Vector>;
using MutVec = Eigen::Map<Vector>;

// ---------------------------------------------------------------------------
// configuration

void ToyLMConfig::validate() const {
    if (vocab_size < 259) throw ArgumentError(fmt::format("vocab_size must be at least 259, got {}", vocab_size));
    if (context_len < 8) throw ArgumentError(fmt::format("context_len must be at least 8, got {}", context_len));
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
        throw ArgumentError("model dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ArgumentError(fmt::format("d_model {} is not divisible by n_heads {}", d_model, n_heads));
}

void to_json(nlohmann::json& j, const ToyLMConfig& cfg) {
    j = {{"vocab_size", cfg.vocab_size}, {"context_len", cfg.context_len}, {"d_model", cfg.d_model},
         {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},         {"d_ff", cfg.d_ff}};
}

void from_json(const nlohmann::json& j, ToyLMConfig& cfg) {
    cfg = ToyLMConfig{};
    try {
        if (j.contains("vocab_size")) cfg.vocab_size = j.at("vocab_size").get<int>();
        if (j.contains("context_len")) cfg.context_len = j.at("context_len").get<int>();
        if (j.contains("d_model")) cfg.d_model = j.at("d_model").get<int>();
        if (j.contains("n_layers")) cfg.n_layers = j.at("n_layers").get<int>();
        if (j.contains("n_heads")) cfg.n_heads = j.at("n_heads").get<int>();
        if (j.contains("d_ff")) cfg.d_ff = j.at("d_ff").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(fmt::format("invalid model config: {}", e.what()));
    }
}

void TrainSpec::validate() const {
    if (epochs < 1) throw ArgumentError("epochs must be at least 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ArgumentError("learning_rate must be positive");
    if (!(grad_clip >= 0.0)) throw ArgumentError("grad_clip must be non-negative");
}

void to_json(nlohmann::json& j, const TrainSpec& spec) {
    j = {{"epochs", spec.epochs},
         {"batch_size", spec.batch_size},
         {"learning_rate", spec.learning_rate},
         {"optimizer", spec.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
         {"seed", spec.seed},
         {"grad_clip", spec.grad_clip}};
    if (spec.max_steps) j["max_steps"] = *spec.max_steps;
}

void from_json(const nlohmann::json& j, TrainSpec& spec) {
    spec = TrainSpec{};
    try {
        if (j.contains("epochs")) spec.epochs = j.at("epochs").get<std::size_t>();
        if (j.contains("batch_size")) spec.batch_size = j.at("batch_size").get<std::size_t>();
        if (j.contains("learning_rate")) spec.learning_rate = j.at("learning_rate").get<double>();
        if (j.contains("optimizer")) {
            const auto o = j.at("optimizer").get<std::string>();
            if (o == "adam")
                spec.optimizer = OptimizerKind::Adam;
            else if (o == "sgd")
                spec.optimizer = OptimizerKind::Sgd;
            else
                throw ArgumentError(fmt::format("unknown optimizer '{}'", o));
        }
        if (j.contains("seed")) spec.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("grad_clip")) spec.grad_clip = j.at("grad_clip").get<double>();
        if (j.contains("max_steps")) spec.max_steps = j.at("max_steps").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(fmt::format("invalid train spec: {}", e.what()));
    }
}

EncodedSequence encode(const SupervisedPair& pair, const ToyLMConfig& cfg) {
    if (pair.completion.empty()) throw ArgumentError("completion must be non-empty");
    const std::size_t len = 1 + pair.prompt.size() + pair.completion.size();
    if (len > static_cast<std::size_t>(cfg.context_len))
        throw ArgumentError(fmt::format("pair needs {} positions but context_len is {}", len, cfg.context_len));
    EncodedSequence seq;
    seq.inputs.reserve(len);
    seq.inputs.push_back(kBos);
    for (unsigned char c : pair.prompt) seq.inputs.push_back(c);
    for (unsigned char c : pair.completion) seq.inputs.push_back(c);
    seq.targets.assign(seq.inputs.begin() + 1, seq.inputs.end());
    seq.targets.push_back(kEos);
    seq.loss_mask.assign(len, 0);
    for (std::size_t p = pair.prompt.size(); p < len; ++p) seq.loss_mask[p] = 1;
    return seq;
}

// ---------------------------------------------------------------------------
// parameter layout

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ToyLMConfig& cfg) {
    cfg.validate();
    const std::int64_t V = cfg.vocab_size, C = cfg.context_len, D = cfg.d_model, F = cfg.d_ff;
    std::vector<std::pair<std::string, Shape>> out;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto p = fmt::format("blocks.{}.", l);
        for (const char* proj : {"q", "k", "v", "o"}) {
            out.emplace_back(p + "attn." + proj + ".weight", Shape{D, D});
            out.emplace_back(p + "attn." + proj + ".bias", Shape{D});
        }
        for (const char* ln : {"ln1", "ln2"}) {
            out.emplace_back(p + ln + ".weight", Shape{D});
            out.emplace_back(p + ln + ".bias", Shape{D});
        }
        out.emplace_back(p + "mlp.fc1.weight", Shape{F, D});
        out.emplace_back(p + "mlp.fc1.bias", Shape{F});
        out.emplace_back(p + "mlp.fc2.weight", Shape{D, F});
        out.emplace_back(p + "mlp.fc2.bias", Shape{D});
    }
    out.emplace_back("ln_f.weight", Shape{D});
    out.emplace_back("ln_f.bias", Shape{D});
    out.emplace_back("lm_head.weight", Shape{V, D});
    out.emplace_back("lm_head.bias", Shape{V});
    out.emplace_back("pos_emb.weight", Shape{C, D});
    out.emplace_back("tok_emb.weight", Shape{V, D});
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

struct BlockOffsets {
    std::size_t ln1_w, ln1_b, q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, ln2_w, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

/// Flat parameter vector layout; slot order is the checkpoint's name order.
struct Layout {
    ToyLMConfig cfg;
    std::vector<std::pair<std::string, Shape>> slots;
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    std::size_t tok, pos, lnf_w, lnf_b, head_w, head_b;
    std::vector<BlockOffsets> blocks;

    explicit Layout(const ToyLMConfig& c) : cfg(c), slots(parameter_shapes(c)) {
        std::map<std::string, std::size_t> at;
        for (const auto& [name, shape] : slots) {
            offsets.push_back(total);
            at[name] = total;
            total += shape_numel(shape);
        }
        tok = at["tok_emb.weight"];
        pos = at["pos_emb.weight"];
        lnf_w = at["ln_f.weight"];
        lnf_b = at["ln_f.bias"];
        head_w = at["lm_head.weight"];
        head_b = at["lm_head.bias"];
        for (int l = 0; l < c.n_layers; ++l) {
            const auto p = fmt::format("blocks.{}.", l);
            blocks.push_back({at[p + "ln1.weight"], at[p + "ln1.bias"], at[p + "attn.q.weight"], at[p + "attn.q.bias"],
                              at[p + "attn.k.weight"], at[p + "attn.k.bias"], at[p + "attn.v.weight"],
                              at[p + "attn.v.bias"], at[p + "attn.o.weight"], at[p + "attn.o.bias"],
                              at[p + "ln2.weight"], at[p + "ln2.bias"], at[p + "mlp.fc1.weight"],
                              at[p + "mlp.fc1.bias"], at[p + "mlp.fc2.weight"], at[p + "mlp.fc2.bias"]});
        }
    }
};

std::vector<double> flatten(const Checkpoint& model, const Layout& layout) {
    std::vector<double> theta(layout.total);
    for (std::size_t s = 0; s < layout.slots.size(); ++s) {
        const auto& t = model.get(layout.slots[s].first);
        t.visit([&](const auto& v) { std::copy(v.begin(), v.end(), theta.begin() + static_cast<std::ptrdiff_t>(layout.offsets[s])); });
    }
    return theta;
}

Checkpoint unflatten(const std::vector<double>& theta, const Layout& layout, DType dtype,
                     const std::map<std::string, std::string>& meta) {
    Checkpoint out;
    out.dtype = dtype;
    out.meta = meta;
    for (std::size_t s = 0; s < layout.slots.size(); ++s) {
        const auto& [name, shape] = layout.slots[s];
        std::span<const double> src(theta.data() + layout.offsets[s], shape_numel(shape));
        out.tensors.emplace(name, Tensor::from_values(shape, dtype, src));
    }
    return out;
}

constexpr double kLnEps = 1e-5;
const double kGeluC = std::sqrt(2.0 / std::numbers::pi);

/// Read-only view of the parameters for one forward/backward pass.
struct Weights {
    const Layout& L;
    const double* p;

    [[nodiscard]] ConstMat mat(std::size_t off, Eigen::Index r, Eigen::Index c) const { return {p + off, r, c}; }
    [[nodiscard]] ConstVec vec(std::size_t off, Eigen::Index n) const { return {p + off, n}; }
};

struct Grads {
    const Layout& L;
    double* p;

    [[nodiscard]] MutMat mat(std::size_t off, Eigen::Index r, Eigen::Index c) const { return {p + off, r, c}; }
    [[nodiscard]] MutVec vec(std::size_t off, Eigen::Index n) const { return {p + off, n}; }
};

Matrix layer_norm(const Matrix& x, const ConstVec& gamma, const ConstVec& beta, Matrix& xhat, Vector& rstd) {
    const auto T = x.rows();
    xhat.resize(T, x.cols());
    rstd.resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const double mu = x.row(t).mean();
        const double var = (x.row(t).array() - mu).square().mean();
        rstd(t) = 1.0 / std::sqrt(var + kLnEps);
        xhat.row(t) = (x.row(t).array() - mu) * rstd(t);
    }
    Matrix y = xhat.array().rowwise() * gamma.transpose().array();
    y.rowwise() += beta.transpose();
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Vector& rstd, const ConstVec& gamma,
                           MutVec dgamma, MutVec dbeta) {
    dgamma += (dy.array() * xhat.array()).colwise().sum().transpose().matrix();
    dbeta += dy.colwise().sum().transpose();
    Matrix dxhat = dy.array().rowwise() * gamma.transpose().array();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index t = 0; t < dy.rows(); ++t) {
        const double m1 = dxhat.row(t).mean();
        const double m2 = (dxhat.row(t).array() * xhat.row(t).array()).mean();
        dx.row(t) = rstd(t) * (dxhat.row(t).array() - m1 - xhat.row(t).array() * m2);
    }
    return dx;
}

Matrix linear(const Matrix& x, const ConstMat& w, const ConstVec& b) {
    Matrix y = x * w.transpose();
    y.rowwise() += b.transpose();
    return y;
}

double gelu(double u) {
    return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u)));
}

double gelu_grad(double u) {
    const double th = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

struct LayerCache {
    Matrix xhat1, h1, q, k, v, att, xhat2, h2, u, g;
    Vector rstd1, rstd2;
    std::vector<Matrix> probs;
};

struct SeqCache {
    std::vector<LayerCache> layers;
    Matrix xhatf, hf, logits;
    Vector rstdf;
};

void forward_seq(const Weights& W, const std::vector<int>& tokens, SeqCache& c) {
    const auto& cfg = W.L.cfg;
    const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
    const Eigen::Index D = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, C = cfg.context_len;
    const Eigen::Index H = cfg.n_heads, dh = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const auto tok = W.mat(W.L.tok, V, D);
    const auto pos = W.mat(W.L.pos, C, D);
    Matrix x(T, D);
    for (Eigen::Index t = 0; t < T; ++t) x.row(t) = tok.row(tokens[static_cast<std::size_t>(t)]) + pos.row(t);

    c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const auto& B = W.L.blocks[static_cast<std::size_t>(l)];
        auto& lc = c.layers[static_cast<std::size_t>(l)];
        lc.h1 = layer_norm(x, W.vec(B.ln1_w, D), W.vec(B.ln1_b, D), lc.xhat1, lc.rstd1);
        lc.q = linear(lc.h1, W.mat(B.q_w, D, D), W.vec(B.q_b, D));
        lc.k = linear(lc.h1, W.mat(B.k_w, D, D), W.vec(B.k_b, D));
        lc.v = linear(lc.h1, W.mat(B.v_w, D, D), W.vec(B.v_b, D));
        lc.att.resize(T, D);
        lc.probs.resize(static_cast<std::size_t>(H));
        for (Eigen::Index h = 0; h < H; ++h) {
            Matrix s = (lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose()) * scale;
            for (Eigen::Index i = 0; i < T; ++i) {
                const double mx = s.row(i).head(i + 1).maxCoeff();
                double z = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    s(i, j) = std::exp(s(i, j) - mx);
                    z += s(i, j);
                }
                s.row(i).head(i + 1) /= z;
                s.row(i).tail(T - i - 1).setZero();
            }
            lc.att.middleCols(h * dh, dh) = s * lc.v.middleCols(h * dh, dh);
            lc.probs[static_cast<std::size_t>(h)] = std::move(s);
        }
        x += linear(lc.att, W.mat(B.o_w, D, D), W.vec(B.o_b, D));

        lc.h2 = layer_norm(x, W.vec(B.ln2_w, D), W.vec(B.ln2_b, D), lc.xhat2, lc.rstd2);
        lc.u = linear(lc.h2, W.mat(B.fc1_w, F, D), W.vec(B.fc1_b, F));
        lc.g = lc.u.unaryExpr([](double u) { return gelu(u); });
        x += linear(lc.g, W.mat(B.fc2_w, D, F), W.vec(B.fc2_b, D));
    }
    c.hf = layer_norm(x, W.vec(W.L.lnf_w, D), W.vec(W.L.lnf_b, D), c.xhatf, c.rstdf);
    c.logits = linear(c.hf, W.mat(W.L.head_w, V, D), W.vec(W.L.head_b, V));
}

void backward_seq(const Weights& W, const Grads& G, const std::vector<int>& tokens, const SeqCache& c,
                  const Matrix& dlogits) {
    const auto& cfg = W.L.cfg;
    const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
    const Eigen::Index D = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, C = cfg.context_len;
    const Eigen::Index H = cfg.n_heads, dh = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    G.mat(W.L.head_w, V, D).noalias() += dlogits.transpose() * c.hf;
    G.vec(W.L.head_b, V) += dlogits.colwise().sum().transpose();
    Matrix dhf = dlogits * W.mat(W.L.head_w, V, D);
    Matrix dx = layer_norm_backward(dhf, c.xhatf, c.rstdf, W.vec(W.L.lnf_w, D), G.vec(W.L.lnf_w, D), G.vec(W.L.lnf_b, D));

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const auto& B = W.L.blocks[static_cast<std::size_t>(l)];
        const auto& lc = c.layers[static_cast<std::size_t>(l)];

        // MLP branch
        G.mat(B.fc2_w, D, F).noalias() += dx.transpose() * lc.g;
        G.vec(B.fc2_b, D) += dx.colwise().sum().transpose();
        Matrix du = dx * W.mat(B.fc2_w, D, F);
        du.array() *= lc.u.unaryExpr([](double u) { return gelu_grad(u); }).array();
        G.mat(B.fc1_w, F, D).noalias() += du.transpose() * lc.h2;
        G.vec(B.fc1_b, F) += du.colwise().sum().transpose();
        Matrix dh2 = du * W.mat(B.fc1_w, F, D);
        dx += layer_norm_backward(dh2, lc.xhat2, lc.rstd2, W.vec(B.ln2_w, D), G.vec(B.ln2_w, D), G.vec(B.ln2_b, D));

        // attention branch
        G.mat(B.o_w, D, D).noalias() += dx.transpose() * lc.att;
        G.vec(B.o_b, D) += dx.colwise().sum().transpose();
        Matrix datt = dx * W.mat(B.o_w, D, D);
        Matrix dq(T, D), dk(T, D), dv(T, D);
        for (Eigen::Index h = 0; h < H; ++h) {
            const auto& P = lc.probs[static_cast<std::size_t>(h)];
            const auto dA = datt.middleCols(h * dh, dh);
            Matrix dP = dA * lc.v.middleCols(h * dh, dh).transpose();
            dv.middleCols(h * dh, dh) = P.transpose() * dA;
            Vector rowdot = (dP.array() * P.array()).rowwise().sum();
            Matrix dS = (P.array() * (dP.array().colwise() - rowdot.array())) * scale;
            dq.middleCols(h * dh, dh) = dS * lc.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh) = dS.transpose() * lc.q.middleCols(h * dh, dh);
        }
        G.mat(B.q_w, D, D).noalias() += dq.transpose() * lc.h1;
        G.mat(B.k_w, D, D).noalias() += dk.transpose() * lc.h1;
        G.mat(B.v_w, D, D).noalias() += dv.transpose() * lc.h1;
        G.vec(B.q_b, D) += dq.colwise().sum().transpose();
        G.vec(B.k_b, D) += dk.colwise().sum().transpose();
        G.vec(B.v_b, D) += dv.colwise().sum().transpose();
        Matrix dh1 = dq * W.mat(B.q_w, D, D) + dk * W.mat(B.k_w, D, D) + dv * W.mat(B.v_w, D, D);
        dx += layer_norm_backward(dh1, lc.xhat1, lc.rstd1, W.vec(B.ln1_w, D), G.vec(B.ln1_w, D), G.vec(B.ln1_b, D));
    }

    auto dtok = G.mat(W.L.tok, V, D);
    auto dpos = G.mat(W.L.pos, C, D);
    for (Eigen::Index t = 0; t < T; ++t) {
        dtok.row(tokens[static_cast<std::size_t>(t)]) += dx.row(t);
        dpos.row(t) += dx.row(t);
    }
}

/// Sum of masked CE terms; fills dlogits with d(sum)/d(logits) when non-null.
double masked_ce(const Matrix& logits, const EncodedSequence& seq, Matrix* dlogits) {
    double total = 0.0;
    if (dlogits) dlogits->setZero(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        if (!seq.loss_mask[static_cast<std::size_t>(t)]) continue;
        const auto row = logits.row(t);
        const double mx = row.maxCoeff();
        const double z = (row.array() - mx).exp().sum();
        const double lse = mx + std::log(z);
        const int target = seq.targets[static_cast<std::size_t>(t)];
        total += lse - row(target);
        if (dlogits) {
            dlogits->row(t) = (row.array() - lse).exp();
            (*dlogits)(t, target) -= 1.0;
        }
    }
    return total;
}

std::size_t mask_count(const EncodedSequence& seq) {
    return static_cast<std::size_t>(std::count(seq.loss_mask.begin(), seq.loss_mask.end(), 1));
}

std::vector<EncodedSequence> encode_all(std::span<const SupervisedPair> batch, const ToyLMConfig& cfg) {
    std::vector<EncodedSequence> out;
    out.reserve(batch.size());
    for (const auto& p : batch) out.push_back(encode(p, cfg));
    return out;
}

/// Loss and gradient (of the mean masked CE) over a batch. Each sequence
/// accumulates into its own buffer and the buffers are summed in index order,
/// so the result does not depend on the thread count.
double batch_gradient(const Layout& L, const std::vector<double>& theta, const std::vector<const EncodedSequence*>& seqs,
                      std::vector<std::vector<double>>& scratch, std::vector<double>& grad) {
    if (scratch.size() < seqs.size()) scratch.resize(seqs.size());
    std::vector<double> losses(seqs.size());
    std::size_t ntok = 0;
    for (const auto* s : seqs) ntok += mask_count(*s);
    parallel_for(seqs.size(), [&](std::size_t i) {
        auto& buf = scratch[i];
        buf.assign(L.total, 0.0);
        SeqCache cache;
        const Weights W{L, theta.data()};
        forward_seq(W, seqs[i]->inputs, cache);
        Matrix dlogits;
        losses[i] = masked_ce(cache.logits, *seqs[i], &dlogits);
        backward_seq(W, Grads{L, buf.data()}, seqs[i]->inputs, cache, dlogits);
    });
    grad.assign(L.total, 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        loss += losses[i];
        const auto& buf = scratch[i];
        for (std::size_t k = 0; k < L.total; ++k) grad[k] += buf[k];
    }
    const double inv = ntok ? 1.0 / static_cast<double>(ntok) : 0.0;
    for (auto& g : grad) g *= inv;
    return loss * inv;
}

/// Incremental decoder with a key/value cache.
class Decoder {
public:
    Decoder(const Layout& L, const double* theta) : mW{L, theta} {
        const auto& cfg = L.cfg;
        mK.assign(static_cast<std::size_t>(cfg.n_layers), Matrix(cfg.context_len, cfg.d_model));
        mV.assign(static_cast<std::size_t>(cfg.n_layers), Matrix(cfg.context_len, cfg.d_model));
    }

    /// Feeds the token at position `pos` and returns next-token logits.
    RowVector step(int token, Eigen::Index pos) {
        const auto& cfg = mW.L.cfg;
        const Eigen::Index D = cfg.d_model, F = cfg.d_ff, V = cfg.vocab_size, C = cfg.context_len;
        const Eigen::Index H = cfg.n_heads, dh = D / H;
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        Matrix x = mW.mat(mW.L.tok, V, D).row(token) + mW.mat(mW.L.pos, C, D).row(pos);
        Matrix xhat;
        Vector rstd;
        for (int l = 0; l < cfg.n_layers; ++l) {
            const auto& B = mW.L.blocks[static_cast<std::size_t>(l)];
            auto& K = mK[static_cast<std::size_t>(l)];
            auto& Vc = mV[static_cast<std::size_t>(l)];
            Matrix h1 = layer_norm(x, mW.vec(B.ln1_w, D), mW.vec(B.ln1_b, D), xhat, rstd);
            Matrix q = linear(h1, mW.mat(B.q_w, D, D), mW.vec(B.q_b, D));
            K.row(pos) = linear(h1, mW.mat(B.k_w, D, D), mW.vec(B.k_b, D));
            Vc.row(pos) = linear(h1, mW.mat(B.v_w, D, D), mW.vec(B.v_b, D));
            Matrix att(1, D);
            for (Eigen::Index h = 0; h < H; ++h) {
                RowVector s = (q.middleCols(h * dh, dh) * K.block(0, h * dh, pos + 1, dh).transpose()) * scale;
                s = (s.array() - s.maxCoeff()).exp();
                s /= s.sum();
                att.middleCols(h * dh, dh) = s * Vc.block(0, h * dh, pos + 1, dh);
            }
            x += linear(att, mW.mat(B.o_w, D, D), mW.vec(B.o_b, D));
            Matrix h2 = layer_norm(x, mW.vec(B.ln2_w, D), mW.vec(B.ln2_b, D), xhat, rstd);
            Matrix g = linear(h2, mW.mat(B.fc1_w, F, D), mW.vec(B.fc1_b, F)).unaryExpr([](double u) { return gelu(u); });
            x += linear(g, mW.mat(B.fc2_w, D, F), mW.vec(B.fc2_b, D));
        }
        Matrix hf = layer_norm(x, mW.vec(mW.L.lnf_w, D), mW.vec(mW.L.lnf_b, D), xhat, rstd);
        return linear(hf, mW.mat(mW.L.head_w, V, D), mW.vec(mW.L.head_b, V)).row(0);
    }

private:
    Weights mW;
    std::vector<Matrix> mK, mV;
};

int argmax(const RowVector& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return static_cast<int>(best);
}

} // namespace

ToyLMConfig config_of(const Checkpoint& model) {
    auto it = model.meta.find(kConfigKey);
    if (it == model.meta.end()) throw ArgumentError(fmt::format("checkpoint has no '{}' metadata", kConfigKey));
    ToyLMConfig cfg;
    try {
        cfg = nlohmann::json::parse(it->second).get<ToyLMConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(fmt::format("bad '{}' metadata: {}", kConfigKey, e.what()));
    }
    cfg.validate();
    CompatReport report;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        auto t = model.tensors.find(name);
        if (t == model.tensors.end())
            report.mismatches.push_back({name, MismatchReason::MissingInLeft});
        else if (t->second.shape() != shape)
            report.mismatches.push_back({name, MismatchReason::ShapeMismatch});
    }
    report.compatible = report.mismatches.empty();
    if (!report.compatible) throw CompatError(std::move(report));
    return cfg;
}

Checkpoint init_model(const ToyLMConfig& cfg, std::uint64_t seed, DType dtype) {
    cfg.validate();
    const double resid_std = 0.02 / std::sqrt(2.0 * cfg.n_layers);
    Checkpoint out;
    out.dtype = dtype;
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
        const auto n = shape_numel(shape);
        std::vector<double> v(n, 0.0);
        const bool is_bias = name.ends_with(".bias");
        const bool is_norm = name.starts_with("ln_f") || name.find(".ln") != std::string::npos;
        if (is_norm && !is_bias) {
            std::fill(v.begin(), v.end(), 1.0);
        } else if (!is_bias) {
            const double std = name.ends_with("attn.o.weight") || name.ends_with("fc2.weight") ? resid_std : 0.02;
            const CounterRng rng(seed, "init:" + name);
            for (std::size_t i = 0; i < n; ++i) v[i] = std * rng.normal(i);
        }
        out.tensors.emplace(name, Tensor::from_values(shape, dtype, v));
    }
    out.meta[kConfigKey] = nlohmann::json(cfg).dump();
    return out;
}

double masked_cross_entropy_sum(const Matrix& logits, const EncodedSequence& seq) {
    return masked_ce(logits, seq, nullptr);
}

ForwardResult forward_loss(const Checkpoint& model, std::span<const SupervisedPair> batch) {
    const auto cfg = config_of(model);
    const auto seqs = encode_all(batch, cfg);
    const Layout L(cfg);
    const auto theta = flatten(model, L);
    ForwardResult out;
    out.logits.resize(seqs.size());
    std::vector<double> losses(seqs.size());
    parallel_for(seqs.size(), [&](std::size_t i) {
        SeqCache cache;
        forward_seq(Weights{L, theta.data()}, seqs[i].inputs, cache);
        losses[i] = masked_ce(cache.logits, seqs[i], nullptr);
        out.logits[i] = std::move(cache.logits);
    });
    double total = 0.0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        total += losses[i];
        out.loss_tokens += mask_count(seqs[i]);
    }
    out.loss = out.loss_tokens ? total / static_cast<double>(out.loss_tokens) : 0.0;
    return out;
}

Checkpoint backward(const Checkpoint& model, std::span<const SupervisedPair> batch) {
    const auto cfg = config_of(model);
    const auto seqs = encode_all(batch, cfg);
    const Layout L(cfg);
    const auto theta = flatten(model, L);
    std::vector<const EncodedSequence*> ptrs;
    for (const auto& s : seqs) ptrs.push_back(&s);
    std::vector<std::vector<double>> scratch;
    std::vector<double> grad;
    batch_gradient(L, theta, ptrs, scratch, grad);
    auto out = unflatten(grad, L, model.dtype, {});
    out.meta["fpvec.kind"] = "gradient";
    out.meta[kConfigKey] = model.meta.at(kConfigKey);
    return out;
}

TrainResult train_logged(const Checkpoint& model, std::span<const SupervisedPair> data, const TrainSpec& spec) {
    spec.validate();
    const auto cfg = config_of(model);
    const auto seqs = encode_all(data, cfg);
    TrainResult result{model, {}};
    if (seqs.empty() || (spec.max_steps && *spec.max_steps == 0)) return result;

    const Layout L(cfg);
    auto theta = flatten(model, L);
    std::vector<double> grad, m, v;
    if (spec.optimizer == OptimizerKind::Adam) {
        m.assign(L.total, 0.0);
        v.assign(L.total, 0.0);
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<std::vector<double>> scratch;
    std::vector<std::size_t> order(seqs.size());
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        RngStream(spec.seed, fmt::format("shuffle:{}", epoch)).shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
            if (spec.max_steps && step >= *spec.max_steps) break;
            std::vector<const EncodedSequence*> batch;
            for (std::size_t i = start; i < std::min(order.size(), start + spec.batch_size); ++i)
                batch.push_back(&seqs[order[i]]);
            const double loss = batch_gradient(L, theta, batch, scratch, grad);
            if (!std::isfinite(loss)) throw TrainingDiverged(step);

            double clip = 1.0;
            if (spec.grad_clip > 0.0) {
                double sq = 0.0;
                for (double g : grad) sq += g * g;
                const double norm = std::sqrt(sq);
                if (norm > spec.grad_clip) clip = spec.grad_clip / norm;
            }
            ++step;
            if (spec.optimizer == OptimizerKind::Adam) {
                const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
                const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
                for (std::size_t k = 0; k < L.total; ++k) {
                    const double g = grad[k] * clip;
                    m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                    v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                    theta[k] -= spec.learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
                }
            } else {
                for (std::size_t k = 0; k < L.total; ++k) theta[k] -= spec.learning_rate * grad[k] * clip;
            }
            result.log.push_back({step, loss});
        }
    }
    for (double t : theta)
        if (!std::isfinite(t)) throw TrainingDiverged(step);
    result.model = unflatten(theta, L, model.dtype, model.meta);
    return result;
}

Checkpoint train(const Checkpoint& model, std::span<const SupervisedPair> data, const TrainSpec& spec) {
    return train_logged(model, data, spec).model;
}

std::string generate(const Checkpoint& model, std::string_view prompt, std::size_t max_new) {
    const auto cfg = config_of(model);
    const std::size_t C = static_cast<std::size_t>(cfg.context_len);
    if (1 + prompt.size() > C)
        throw ArgumentError(fmt::format("prompt needs {} positions but context_len is {}", 1 + prompt.size(), C));
    std::string out;
    if (max_new == 0) return out;
    const Layout L(cfg);
    const auto theta = flatten(model, L);
    Decoder dec(L, theta.data());

    Eigen::Index pos = 0;
    RowVector logits = dec.step(kBos, pos++);
    for (unsigned char ch : prompt) logits = dec.step(ch, pos++);
    while (out.size() < max_new) {
        const int next = argmax(logits);
        if (next >= 256) break;
        out.push_back(static_cast<char>(next));
        if (static_cast<std::size_t>(pos) >= C) break;
        logits = dec.step(next, pos++);
    }
    return out;
}

TokenMetrics evaluate_tokens(const Checkpoint& model, std::span<const SupervisedPair> data) {
    if (data.empty()) throw ArgumentError("evaluation corpus is empty");
    const auto cfg = config_of(model);
    const auto fr = forward_loss(model, data);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto seq = encode(data[i], cfg);
        const auto& lg = fr.logits[i];
        for (Eigen::Index t = 0; t < lg.rows(); ++t) {
            if (!seq.loss_mask[static_cast<std::size_t>(t)]) continue;
            if (argmax(lg.row(t)) == seq.targets[static_cast<std::size_t>(t)]) ++correct;
        }
    }
    TokenMetrics m;
    m.loss = fr.loss;
    m.tokens = fr.loss_tokens;
    m.token_acc = fr.loss_tokens ? static_cast<double>(correct) / static_cast<double>(fr.loss_tokens) : 0.0;
    return m;
}

} // namespace fpvec::toylm
