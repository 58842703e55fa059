#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "brainext/common.hpp"
#include "brainext/core.hpp"
#include "brainext/image.hpp"

namespace brainext {

// Patch triple from slices z-1,z,z+1 plus normalized coordinates.
struct PixelFeature {
    int patch = 11;
    std::vector<float> patches;  // streams * patch * patch, stream-major
    std::array<double, 3> coords{};
};

inline PixelFeature extract_feature(const Volume& v, int x, int y, int z, int patch = 11) {
    if (!v.in_bounds(x, y, z)) throw ValidationError("extract_feature: pixel outside volume");
    PixelFeature f;
    f.patch = patch;
    f.patches.assign(static_cast<std::size_t>(3) * patch * patch, 0.0f);
    const int half = patch / 2;
    for (int s = 0; s < 3; ++s) {
        const int zs = z - 1 + s;
        if (zs < 0 || zs >= v.nz) continue;  // zero-padded out-of-volume slice
        float* dst = f.patches.data() + static_cast<std::size_t>(s) * patch * patch;
        for (int dy = -half; dy <= half; ++dy)
            for (int dx = -half; dx <= half; ++dx) {
                const int px = x + dx, py = y + dy;
                if (px >= 0 && px < v.nx && py >= 0 && py < v.ny)
                    dst[static_cast<std::size_t>(dy + half) * patch + (dx + half)] =
                        v.at(px, py, zs);
            }
    }
    f.coords = {static_cast<double>(x) / v.nx, static_cast<double>(y) / v.ny,
                static_cast<double>(z) / v.nz};
    return f;
}

// Architecture description. The default reproduces the declared layer widths:
// three 3x3 conv layers (depths 13/26/39, same padding, ReLU, ceil-mode 2x2
// max-pool), a per-stream linear projection to 190 features, concatenation
// with the 3 coordinates and one constant-zero unit (574 total), then fully
// connected layers 574-300-50-2 with softmax.
struct CnnSpec {
    int patch = 11;
    int streams = 3;
    std::vector<int> conv_depths = {13, 26, 39};
    int proj_dim = 190;  // 0 disables the projection; streams feed their flatten
    bool pad_unit = true;
    std::vector<int> fc_widths = {300, 50, 2};  // hidden widths then class count
    double dropout_rate = 0.5;

    int conv_out_side() const {
        int side = patch;
        for (std::size_t i = 0; i < conv_depths.size(); ++i) side = (side + 1) / 2;
        return side;
    }
    int stream_flat() const {
        return conv_out_side() * conv_out_side() * conv_depths.back();
    }
    int stream_features() const { return proj_dim > 0 ? proj_dim : stream_flat(); }
    int fc_input() const { return streams * stream_features() + 3 + (pad_unit ? 1 : 0); }

    void validate() const {
        if (patch < 3 || patch % 2 == 0) throw ValidationError("cnn patch must be odd and >= 3");
        if (conv_depths.empty() || fc_widths.size() < 1)
            throw ValidationError("cnn spec needs conv and fc layers");
        if (fc_widths.back() != 2) throw ValidationError("cnn output width must be 2");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ValidationError("cnn dropout rate must be in [0,1)");
    }
};

// All parameters live in one flat vector; is_weight marks entries included in
// the L2 penalty (biases excluded).
struct CnnModel {
    CnnSpec spec;
    std::vector<double> params;
    std::vector<std::uint8_t> is_weight;

    // layout offsets
    std::vector<std::size_t> conv_w, conv_b;
    std::vector<std::size_t> proj_w, proj_b;
    std::vector<std::size_t> fc_w, fc_b;

    explicit CnnModel(const CnnSpec& s = CnnSpec{}) : spec(s) {
        spec.validate();
        std::size_t off = 0;
        auto add = [&](std::size_t n, bool weight) {
            const std::size_t at = off;
            off += n;
            is_weight.resize(off, weight ? 1 : 0);
            return at;
        };
        int in_ch = 1;
        for (int depth : spec.conv_depths) {
            conv_w.push_back(add(static_cast<std::size_t>(depth) * in_ch * 9, true));
            conv_b.push_back(add(static_cast<std::size_t>(depth), false));
            in_ch = depth;
        }
        if (spec.proj_dim > 0) {
            for (int s = 0; s < spec.streams; ++s) {
                proj_w.push_back(
                    add(static_cast<std::size_t>(spec.proj_dim) * spec.stream_flat(), true));
                proj_b.push_back(add(static_cast<std::size_t>(spec.proj_dim), false));
            }
        }
        int in = spec.fc_input();
        for (int width : spec.fc_widths) {
            fc_w.push_back(add(static_cast<std::size_t>(width) * in, true));
            fc_b.push_back(add(static_cast<std::size_t>(width), false));
            in = width;
        }
        params.assign(off, 0.0);
    }

    std::size_t n_params() const { return params.size(); }
};

// Conv weights ~ N(0, 0.1) and fully connected weights ~ N(0, 1/n_prev),
// both read as variances; biases start at zero.
inline void init_weights(CnnModel& model, std::uint64_t seed) {
    Rng rng(seed);
    std::fill(model.params.begin(), model.params.end(), 0.0);
    const double conv_std = std::sqrt(0.1);
    int in_ch = 1;
    for (std::size_t c = 0; c < model.spec.conv_depths.size(); ++c) {
        const std::size_t n = static_cast<std::size_t>(model.spec.conv_depths[c]) * in_ch * 9;
        for (std::size_t i = 0; i < n; ++i)
            model.params[model.conv_w[c] + i] = rng.normal(0.0, conv_std);
        in_ch = model.spec.conv_depths[c];
    }
    if (model.spec.proj_dim > 0) {
        const double std = std::sqrt(1.0 / model.spec.stream_flat());
        for (int s = 0; s < model.spec.streams; ++s) {
            const std::size_t n =
                static_cast<std::size_t>(model.spec.proj_dim) * model.spec.stream_flat();
            for (std::size_t i = 0; i < n; ++i)
                model.params[model.proj_w[static_cast<std::size_t>(s)] + i] =
                    rng.normal(0.0, std);
        }
    }
    int in = model.spec.fc_input();
    for (std::size_t f = 0; f < model.spec.fc_widths.size(); ++f) {
        const double std = std::sqrt(1.0 / in);
        const std::size_t n = static_cast<std::size_t>(model.spec.fc_widths[f]) * in;
        for (std::size_t i = 0; i < n; ++i) model.params[model.fc_w[f] + i] = rng.normal(0.0, std);
        in = model.spec.fc_widths[f];
    }
}

namespace cnn_detail {

// Per-sample activations kept for backprop.
struct Workspace {
    // conv_in[stream][layer]: input maps; conv_out: post-ReLU maps;
    // pool_out: pooled maps; pool_arg: argmax index into conv_out
    std::vector<std::vector<std::vector<double>>> conv_pre, pool_out;
    std::vector<std::vector<std::vector<int>>> pool_arg;
    std::vector<std::vector<double>> stream_feat;  // per stream, after projection
    std::vector<double> fc_in;                     // concatenated input
    std::vector<std::vector<double>> fc_pre;       // pre-activation per fc layer
    std::vector<std::vector<double>> fc_act;       // post relu+dropout (not last)
    std::vector<std::vector<double>> drop_mask;    // per hidden fc layer
    std::vector<double> probs;
};

inline int conv_side(const CnnSpec& spec, int layer) {
    int side = spec.patch;
    for (int i = 0; i < layer; ++i) side = (side + 1) / 2;
    return side;
}

// Same-padded 3x3 convolution + bias; writes pre-activations.
inline void conv3x3(const double* in, int side, int in_ch, const double* w, const double* b,
                    int out_ch, double* out) {
    const std::size_t plane = static_cast<std::size_t>(side) * side;
    for (int d = 0; d < out_ch; ++d) {
        double* dst = out + static_cast<std::size_t>(d) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = b[d];
        for (int ci = 0; ci < in_ch; ++ci) {
            const double* src = in + static_cast<std::size_t>(ci) * plane;
            const double* k = w + (static_cast<std::size_t>(d) * in_ch + ci) * 9;
            for (int y = 0; y < side; ++y)
                for (int x = 0; x < side; ++x) {
                    double acc = 0.0;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int sy = y + ky - 1;
                        if (sy < 0 || sy >= side) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sx = x + kx - 1;
                            if (sx < 0 || sx >= side) continue;
                            acc += k[ky * 3 + kx] * src[static_cast<std::size_t>(sy) * side + sx];
                        }
                    }
                    dst[static_cast<std::size_t>(y) * side + x] += acc;
                }
        }
    }
}

}  // namespace cnn_detail

// Forward pass for one sample. ReLU is applied on top of stored
// pre-activations during use; dropout masks are drawn only in train mode.
inline void cnn_forward_sample(const CnnModel& model, const PixelFeature& sample, bool train_mode,
                               Rng* rng, cnn_detail::Workspace& ws) {
    const CnnSpec& spec = model.spec;
    if (sample.patch != spec.patch) throw ValidationError("cnn: sample patch size mismatch");
    const int n_conv = static_cast<int>(spec.conv_depths.size());
    ws.conv_pre.assign(static_cast<std::size_t>(spec.streams), {});
    ws.pool_out.assign(static_cast<std::size_t>(spec.streams), {});
    ws.pool_arg.assign(static_cast<std::size_t>(spec.streams), {});
    ws.stream_feat.assign(static_cast<std::size_t>(spec.streams), {});

    for (int s = 0; s < spec.streams; ++s) {
        auto& pre = ws.conv_pre[static_cast<std::size_t>(s)];
        auto& pooled = ws.pool_out[static_cast<std::size_t>(s)];
        auto& parg = ws.pool_arg[static_cast<std::size_t>(s)];
        pre.resize(static_cast<std::size_t>(n_conv));
        pooled.resize(static_cast<std::size_t>(n_conv));
        parg.resize(static_cast<std::size_t>(n_conv));

        std::vector<double> cur(static_cast<std::size_t>(spec.patch) * spec.patch);
        const float* src = sample.patches.data() + static_cast<std::size_t>(s) * cur.size();
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = src[i];

        int side = spec.patch;
        int in_ch = 1;
        for (int c = 0; c < n_conv; ++c) {
            const int out_ch = spec.conv_depths[static_cast<std::size_t>(c)];
            const std::size_t plane = static_cast<std::size_t>(side) * side;
            pre[static_cast<std::size_t>(c)].assign(static_cast<std::size_t>(out_ch) * plane, 0.0);
            cnn_detail::conv3x3(cur.data(), side, in_ch,
                                model.params.data() + model.conv_w[static_cast<std::size_t>(c)],
                                model.params.data() + model.conv_b[static_cast<std::size_t>(c)],
                                out_ch, pre[static_cast<std::size_t>(c)].data());
            // ReLU + ceil-mode 2x2 max pool
            const int pside = (side + 1) / 2;
            const std::size_t pplane = static_cast<std::size_t>(pside) * pside;
            pooled[static_cast<std::size_t>(c)].assign(static_cast<std::size_t>(out_ch) * pplane,
                                                       0.0);
            parg[static_cast<std::size_t>(c)].assign(static_cast<std::size_t>(out_ch) * pplane, 0);
            for (int d = 0; d < out_ch; ++d) {
                const double* act = pre[static_cast<std::size_t>(c)].data() +
                                    static_cast<std::size_t>(d) * plane;
                double* pdst = pooled[static_cast<std::size_t>(c)].data() +
                               static_cast<std::size_t>(d) * pplane;
                int* adst = parg[static_cast<std::size_t>(c)].data() +
                            static_cast<std::size_t>(d) * pplane;
                for (int py = 0; py < pside; ++py)
                    for (int px = 0; px < pside; ++px) {
                        double best = -1.0;  // ReLU output is >= 0
                        int best_idx = -1;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const int yy = 2 * py + dy, xx = 2 * px + dx;
                                if (yy >= side || xx >= side) continue;
                                const int idx = yy * side + xx;
                                const double v = std::max(0.0, act[idx]);
                                if (v > best) {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        pdst[static_cast<std::size_t>(py) * pside + px] = best;
                        adst[static_cast<std::size_t>(py) * pside + px] = best_idx;
                    }
            }
            cur = pooled[static_cast<std::size_t>(c)];
            side = pside;
            in_ch = out_ch;
        }

        // per-stream projection (linear) or raw flatten
        const std::vector<double>& flat = pooled[static_cast<std::size_t>(n_conv - 1)];
        if (spec.proj_dim > 0) {
            const double* w = model.params.data() + model.proj_w[static_cast<std::size_t>(s)];
            const double* b = model.params.data() + model.proj_b[static_cast<std::size_t>(s)];
            auto& feat = ws.stream_feat[static_cast<std::size_t>(s)];
            feat.assign(static_cast<std::size_t>(spec.proj_dim), 0.0);
            const std::size_t in_dim = flat.size();
            for (int o = 0; o < spec.proj_dim; ++o) {
                double acc = b[o];
                const double* row = w + static_cast<std::size_t>(o) * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * flat[i];
                feat[static_cast<std::size_t>(o)] = acc;
            }
        } else {
            ws.stream_feat[static_cast<std::size_t>(s)] = flat;
        }
    }

    // concatenate streams + coords (+ constant zero unit)
    ws.fc_in.clear();
    for (int s = 0; s < spec.streams; ++s)
        ws.fc_in.insert(ws.fc_in.end(), ws.stream_feat[static_cast<std::size_t>(s)].begin(),
                        ws.stream_feat[static_cast<std::size_t>(s)].end());
    ws.fc_in.push_back(sample.coords[0]);
    ws.fc_in.push_back(sample.coords[1]);
    ws.fc_in.push_back(sample.coords[2]);
    if (spec.pad_unit) ws.fc_in.push_back(0.0);

    const std::size_t n_fc = spec.fc_widths.size();
    ws.fc_pre.assign(n_fc, {});
    ws.fc_act.assign(n_fc, {});
    ws.drop_mask.assign(n_fc, {});
    const std::vector<double>* in = &ws.fc_in;
    for (std::size_t f = 0; f < n_fc; ++f) {
        const int width = spec.fc_widths[f];
        const double* w = model.params.data() + model.fc_w[f];
        const double* b = model.params.data() + model.fc_b[f];
        auto& pre = ws.fc_pre[f];
        pre.assign(static_cast<std::size_t>(width), 0.0);
        const std::size_t in_dim = in->size();
        for (int o = 0; o < width; ++o) {
            double acc = b[o];
            const double* row = w + static_cast<std::size_t>(o) * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * (*in)[i];
            pre[static_cast<std::size_t>(o)] = acc;
        }
        if (f + 1 < n_fc) {
            auto& act = ws.fc_act[f];
            act.resize(pre.size());
            for (std::size_t i = 0; i < pre.size(); ++i) act[i] = std::max(0.0, pre[i]);
            if (train_mode && spec.dropout_rate > 0.0) {
                auto& mask = ws.drop_mask[f];
                mask.resize(act.size());
                const double keep = 1.0 - spec.dropout_rate;
                for (std::size_t i = 0; i < act.size(); ++i) {
                    // inverted dropout: scale kept units so inference needs no rescale
                    mask[i] = (rng->uniform01() < keep) ? 1.0 / keep : 0.0;
                    act[i] *= mask[i];
                }
            }
            in = &act;
        }
    }

    // softmax
    const auto& logits = ws.fc_pre.back();
    const double mx = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
    ws.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
}

inline std::vector<std::array<double, 2>> cnn_forward(const CnnModel& model,
                                                      const std::vector<PixelFeature>& batch,
                                                      bool train_mode = false,
                                                      Rng* rng = nullptr) {
    if (train_mode && !rng) throw ValidationError("cnn_forward: train mode needs an rng");
    cnn_detail::Workspace ws;
    std::vector<std::array<double, 2>> out;
    out.reserve(batch.size());
    for (const auto& s : batch) {
        cnn_forward_sample(model, s, train_mode, rng, ws);
        out.push_back({ws.probs[0], ws.probs[1]});
    }
    return out;
}

// Cross-entropy with probability floor + L2 on weights (biases excluded).
inline double cnn_loss(const CnnModel& model, const std::vector<PixelFeature>& batch,
                       const std::vector<int>& labels, double eta) {
    if (batch.size() != labels.size() || batch.empty())
        throw ValidationError("cnn_loss: batch/labels mismatch");
    const auto probs = cnn_forward(model, batch, false, nullptr);
    double data = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double p = std::clamp(probs[i][static_cast<std::size_t>(labels[i])], 1e-12, 1.0);
        data -= std::log(p);
    }
    data /= static_cast<double>(batch.size());
    double reg = 0.0;
    for (std::size_t i = 0; i < model.params.size(); ++i)
        if (model.is_weight[i]) reg += model.params[i] * model.params[i];
    return data + 0.5 * eta * reg;
}

// Backprop for the mean cross-entropy + L2 objective. Returns the loss.
inline double cnn_loss_and_grad(const CnnModel& model, const std::vector<PixelFeature>& batch,
                                const std::vector<int>& labels, double eta, bool train_mode,
                                Rng* rng, std::vector<double>& grad,
                                std::size_t* correct_out = nullptr) {
    if (batch.size() != labels.size() || batch.empty())
        throw ValidationError("cnn_loss_and_grad: batch/labels mismatch");
    const CnnSpec& spec = model.spec;
    grad.assign(model.params.size(), 0.0);
    cnn_detail::Workspace ws;
    const int n_conv = static_cast<int>(spec.conv_depths.size());
    const std::size_t n_fc = spec.fc_widths.size();
    double data_loss = 0.0;
    std::size_t correct = 0;

    for (std::size_t si = 0; si < batch.size(); ++si) {
        cnn_forward_sample(model, batch[si], train_mode, rng, ws);
        const int label = labels[si];
        const double p_true = ws.probs[static_cast<std::size_t>(label)];
        data_loss -= std::log(std::clamp(p_true, 1e-12, 1.0));
        if ((ws.probs[1] > ws.probs[0] ? 1 : 0) == label) ++correct;

        // d(loss)/d(logits); zero when the floored log is flat
        std::vector<double> delta(2, 0.0);
        if (p_true >= 1e-12) {
            delta[0] = ws.probs[0] - (label == 0 ? 1.0 : 0.0);
            delta[1] = ws.probs[1] - (label == 1 ? 1.0 : 0.0);
        }

        // FC backward
        for (std::size_t f = n_fc; f-- > 0;) {
            const std::vector<double>& in = (f == 0) ? ws.fc_in : ws.fc_act[f - 1];
            const std::size_t in_dim = in.size();
            double* gw = grad.data() + model.fc_w[f];
            double* gb = grad.data() + model.fc_b[f];
            const double* w = model.params.data() + model.fc_w[f];
            std::vector<double> next(in_dim, 0.0);
            for (std::size_t o = 0; o < delta.size(); ++o) {
                gb[o] += delta[o];
                double* grow = gw + o * in_dim;
                const double* wrow = w + o * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) {
                    grow[i] += delta[o] * in[i];
                    next[i] += delta[o] * wrow[i];
                }
            }
            if (f > 0) {
                // through dropout and ReLU of the previous hidden layer
                const auto& pre = ws.fc_pre[f - 1];
                const auto& mask = ws.drop_mask[f - 1];
                for (std::size_t i = 0; i < in_dim; ++i) {
                    double g = next[i];
                    if (!mask.empty()) g *= mask[i];
                    if (pre[i] <= 0.0) g = 0.0;
                    next[i] = g;
                }
            }
            delta = std::move(next);
        }

        // split the fc-input gradient back into streams (coords and pad unit
        // are inputs, not parameters)
        std::size_t off = 0;
        for (int s = 0; s < spec.streams; ++s) {
            const std::size_t feat_dim = ws.stream_feat[static_cast<std::size_t>(s)].size();
            std::vector<double> gfeat(delta.begin() + off, delta.begin() + off + feat_dim);
            off += feat_dim;

            const std::vector<double>& flat =
                ws.pool_out[static_cast<std::size_t>(s)][static_cast<std::size_t>(n_conv - 1)];
            std::vector<double> gflat(flat.size(), 0.0);
            if (spec.proj_dim > 0) {
                const double* w = model.params.data() + model.proj_w[static_cast<std::size_t>(s)];
                double* gw = grad.data() + model.proj_w[static_cast<std::size_t>(s)];
                double* gb = grad.data() + model.proj_b[static_cast<std::size_t>(s)];
                const std::size_t in_dim = flat.size();
                for (int o = 0; o < spec.proj_dim; ++o) {
                    const double d = gfeat[static_cast<std::size_t>(o)];
                    gb[o] += d;
                    double* grow = gw + static_cast<std::size_t>(o) * in_dim;
                    const double* wrow = w + static_cast<std::size_t>(o) * in_dim;
                    for (std::size_t i = 0; i < in_dim; ++i) {
                        grow[i] += d * flat[i];
                        gflat[i] += d * wrow[i];
                    }
                }
            } else {
                gflat = std::move(gfeat);
            }

            // conv stack backward
            for (int c = n_conv - 1; c >= 0; --c) {
                const int side = cnn_detail::conv_side(spec, c);
                const int pside = (side + 1) / 2;
                const int out_ch = spec.conv_depths[static_cast<std::size_t>(c)];
                const std::size_t plane = static_cast<std::size_t>(side) * side;
                const std::size_t pplane = static_cast<std::size_t>(pside) * pside;
                const auto& pre = ws.conv_pre[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
                const auto& argm = ws.pool_arg[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];

                // unpool + ReLU
                std::vector<double> gact(static_cast<std::size_t>(out_ch) * plane, 0.0);
                for (int d = 0; d < out_ch; ++d)
                    for (std::size_t pi = 0; pi < pplane; ++pi) {
                        const int idx = argm[static_cast<std::size_t>(d) * pplane + pi];
                        if (idx < 0) continue;
                        const double g = gflat[static_cast<std::size_t>(d) * pplane + pi];
                        if (pre[static_cast<std::size_t>(d) * plane + idx] > 0.0)
                            gact[static_cast<std::size_t>(d) * plane + idx] += g;
                    }

                // conv backward
                const int in_ch = (c == 0) ? 1 : spec.conv_depths[static_cast<std::size_t>(c - 1)];
                std::vector<double> input_map;
                const double* in_data = nullptr;
                if (c == 0) {
                    input_map.resize(plane);
                    const float* src = batch[si].patches.data() +
                                       static_cast<std::size_t>(s) * spec.patch * spec.patch;
                    for (std::size_t i = 0; i < plane; ++i) input_map[i] = src[i];
                    in_data = input_map.data();
                } else {
                    in_data = ws.pool_out[static_cast<std::size_t>(s)][static_cast<std::size_t>(c - 1)]
                                  .data();
                }
                double* gw = grad.data() + model.conv_w[static_cast<std::size_t>(c)];
                double* gb = grad.data() + model.conv_b[static_cast<std::size_t>(c)];
                const double* w = model.params.data() + model.conv_w[static_cast<std::size_t>(c)];
                std::vector<double> gin(static_cast<std::size_t>(in_ch) * plane, 0.0);
                for (int d = 0; d < out_ch; ++d) {
                    const double* gout = gact.data() + static_cast<std::size_t>(d) * plane;
                    for (std::size_t i = 0; i < plane; ++i) gb[d] += gout[i];
                    for (int ci = 0; ci < in_ch; ++ci) {
                        const double* src = in_data + static_cast<std::size_t>(ci) * plane;
                        double* gk = gw + (static_cast<std::size_t>(d) * in_ch + ci) * 9;
                        const double* k = w + (static_cast<std::size_t>(d) * in_ch + ci) * 9;
                        double* gsrc = gin.data() + static_cast<std::size_t>(ci) * plane;
                        for (int y = 0; y < side; ++y)
                            for (int x = 0; x < side; ++x) {
                                const double g = gout[static_cast<std::size_t>(y) * side + x];
                                if (g == 0.0) continue;
                                for (int ky = 0; ky < 3; ++ky) {
                                    const int sy = y + ky - 1;
                                    if (sy < 0 || sy >= side) continue;
                                    for (int kx = 0; kx < 3; ++kx) {
                                        const int sx = x + kx - 1;
                                        if (sx < 0 || sx >= side) continue;
                                        const std::size_t sidx =
                                            static_cast<std::size_t>(sy) * side + sx;
                                        gk[ky * 3 + kx] += g * src[sidx];
                                        gsrc[sidx] += g * k[ky * 3 + kx];
                                    }
                                }
                            }
                    }
                }
                gflat = std::move(gin);  // gradient wrt this layer's input (= previous pool out)
            }
        }
    }

    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (double& g : grad) g *= inv_n;
    double reg = 0.0;
    for (std::size_t i = 0; i < model.params.size(); ++i)
        if (model.is_weight[i]) {
            reg += model.params[i] * model.params[i];
            grad[i] += eta * model.params[i];
        }
    if (correct_out) *correct_out = correct;
    return data_loss * inv_n + 0.5 * eta * reg;
}

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t t = 0;
    double alpha = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(AdamState& state, std::vector<double>& params,
                      const std::vector<double>& grad) {
    if (state.m.size() != params.size() || grad.size() != params.size())
        throw ValidationError("adam_step: shape mismatch");
    state.t += 1;
    const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / b1t;
        const double vhat = state.v[i] / b2t;
        params[i] -= state.alpha * mhat / (std::sqrt(vhat) + state.eps);
    }
}

// Training pool kept as pixel references; patches are materialized per batch.
struct CnnSample {
    int volume = 0;
    int x = 0, y = 0, z = 0;
    std::uint8_t label = 0;
};

struct CnnDataset {
    const std::vector<Volume>* volumes = nullptr;
    std::vector<CnnSample> samples;
};

struct CnnTrainConfig {
    int epochs = 6;
    int batch_size = 128;
    int samples_per_class = 4000;  // per epoch
    double eta = 0.005;
    double alpha = 1e-4;
    std::uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0;
};

inline std::vector<EpochStats> cnn_train(CnnModel& model, const CnnDataset& dataset,
                                         const CnnTrainConfig& cfg) {
    if (!dataset.volumes) throw ValidationError("cnn_train: dataset has no volumes");
    std::vector<std::size_t> idx0, idx1;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i)
        (dataset.samples[i].label ? idx1 : idx0).push_back(i);
    if (idx0.empty() || idx1.empty())
        throw ValidationError("cnn_train: dataset must contain both classes");

    Rng rng(cfg.seed);
    AdamState adam(model.n_params());
    adam.alpha = cfg.alpha;
    std::vector<EpochStats> history;
    std::vector<double> grad;
    const std::size_t per_class = std::min<std::size_t>(
        {idx0.size(), idx1.size(), static_cast<std::size_t>(cfg.samples_per_class)});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(idx0);
        rng.shuffle(idx1);
        std::vector<std::size_t> order;
        order.reserve(2 * per_class);
        order.insert(order.end(), idx0.begin(), idx0.begin() + per_class);
        order.insert(order.end(), idx1.begin(), idx1.begin() + per_class);
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0, batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<PixelFeature> batch;
            std::vector<int> labels;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const CnnSample& s = dataset.samples[order[i]];
                batch.push_back(extract_feature((*dataset.volumes)[static_cast<std::size_t>(
                                                    s.volume)],
                                                s.x, s.y, s.z, model.spec.patch));
                labels.push_back(s.label);
            }
            std::size_t batch_correct = 0;
            loss_sum += cnn_loss_and_grad(model, batch, labels, cfg.eta, true, &rng, grad,
                                          &batch_correct);
            adam_step(adam, model.params, grad);
            correct += batch_correct;
            seen += batch.size();
            ++batches;
        }
        history.push_back(EpochStats{epoch + 1, loss_sum / static_cast<double>(batches),
                                     static_cast<double>(correct) / static_cast<double>(seen)});
    }
    return history;
}

// Boundary = foreground pixels with a background 4-neighbor (the image border
// counts as background); band = Chebyshev distance <= d around it.
inline Mask2D boundary_band(const Mask2D& mask, int distance) {
    Mask2D boundary(mask.width, mask.height, 0);
    static const int dx4[4] = {1, -1, 0, 0};
    static const int dy4[4] = {0, 0, 1, -1};
    bool any = false;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            for (int d = 0; d < 4; ++d) {
                const int nx = x + dx4[d], ny = y + dy4[d];
                if (!mask.in_bounds(nx, ny) || !mask.at(nx, ny)) {
                    boundary.at(x, y) = 1;
                    any = true;
                    break;
                }
            }
        }
    if (!any) return boundary;  // empty mask -> empty band
    Mask2D band = boundary;
    for (int step = 0; step < distance; ++step) {
        Mask2D next = band;
        for (int y = 0; y < band.height; ++y)
            for (int x = 0; x < band.width; ++x) {
                if (next.at(x, y)) continue;
                for (int dy = -1; dy <= 1 && !next.at(x, y); ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (band.in_bounds(nx, ny) && band.at(nx, ny)) {
                            next.at(x, y) = 1;
                            break;
                        }
                    }
            }
        band = std::move(next);
    }
    return band;
}

inline std::vector<double> cnn_classify(const CnnModel& model,
                                        const std::vector<PixelFeature>& batch) {
    const auto probs = cnn_forward(model, batch, false, nullptr);
    std::vector<double> out(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = probs[i][1];
    return out;
}

}  // namespace brainext
