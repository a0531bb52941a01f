// SPDX-License-Identifier: Apache-2.0

#include "evopath/layer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "evopath/hashing.hpp"

namespace evopath {
namespace {

template <class T>
using ParamSpans = std::vector<std::span<const T>>;

// Shared by the float production path and the double finite-difference path.
template <class T>
void forward_rows(LayerKind kind, std::size_t in, std::size_t out, const ParamSpans<T>& p,
                  std::span<const T> x, std::size_t rows, std::span<T> y) {
    switch (kind) {
    case LayerKind::linear: {
        const auto w = p[0];
        const auto b = p[1];
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = x.data() + r * in;
            for (std::size_t o = 0; o < out; ++o) {
                T acc = b[o];
                const T* wo = w.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
                y[r * out + o] = acc;
            }
        }
        break;
    }
    case LayerKind::residual: {
        const auto w1 = p[0];
        const auto b1 = p[1];
        const auto w2 = p[2];
        const auto b2 = p[3];
        std::vector<T> hidden(in);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = x.data() + r * in;
            for (std::size_t j = 0; j < in; ++j) {
                T acc = b1[j];
                const T* wj = w1.data() + j * in;
                for (std::size_t i = 0; i < in; ++i) acc += wj[i] * xr[i];
                hidden[j] = std::tanh(acc);
            }
            for (std::size_t o = 0; o < in; ++o) {
                T acc = b2[o];
                const T* wo = w2.data() + o * in;
                for (std::size_t j = 0; j < in; ++j) acc += wo[j] * hidden[j];
                y[r * in + o] = xr[o] + acc;
            }
        }
        break;
    }
    case LayerKind::normalization: {
        const auto gamma = p[0];
        const auto beta = p[1];
        for (std::size_t r = 0; r < rows; ++r) {
            const T* xr = x.data() + r * in;
            T mean = 0;
            for (std::size_t i = 0; i < in; ++i) mean += xr[i];
            mean /= static_cast<T>(in);
            T var = 0;
            for (std::size_t i = 0; i < in; ++i) var += (xr[i] - mean) * (xr[i] - mean);
            var /= static_cast<T>(in);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(kNormEpsilon));
            for (std::size_t i = 0; i < in; ++i) y[r * in + i] = gamma[i] * (xr[i] - mean) * inv + beta[i];
        }
        break;
    }
    }
}

ParamSpans<float> float_spans(const Layer& layer) {
    ParamSpans<float> spans;
    for (const auto& b : layer.params) spans.push_back(b.tensor().values());
    return spans;
}

void check_input(const Layer& layer, const Tensor& input) {
    if (input.rank() == 0 || input.last_extent() != layer.in_width) {
        throw ShapeError(fmt::format("{} layer ({}->{}) got input of shape {}", to_string(layer.kind),
                                     layer.in_width, layer.out_width, input.shape_string()));
    }
}

std::vector<std::size_t> with_last(std::vector<std::size_t> shape, std::size_t last) {
    shape.back() = last;
    return shape;
}

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Tensor t({rows, cols});
    for (float& v : t.values()) v = static_cast<float>(rng.normal() * stddev);
    return t;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::residual: return "residual";
    case LayerKind::normalization: return "normalization";
    }
    return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
    if (name == "linear") return LayerKind::linear;
    if (name == "residual") return LayerKind::residual;
    if (name == "normalization") return LayerKind::normalization;
    throw std::invalid_argument(fmt::format("unknown layer kind '{}'", name));
}

void Layer::validate() const {
    using Shape = std::vector<std::size_t>;
    std::vector<Shape> expected;
    switch (kind) {
    case LayerKind::linear:
        expected = {{out_width, in_width}, {out_width}};
        break;
    case LayerKind::residual:
        if (in_width != out_width) {
            throw ShapeError(fmt::format("residual layer must preserve width, got {}->{}", in_width, out_width));
        }
        expected = {{in_width, in_width}, {in_width}, {in_width, in_width}, {in_width}};
        break;
    case LayerKind::normalization:
        if (in_width != out_width) {
            throw ShapeError(fmt::format("normalization layer must preserve width, got {}->{}", in_width, out_width));
        }
        expected = {{in_width}, {in_width}};
        break;
    }
    if (in_width == 0 || out_width == 0) throw ShapeError("layer widths must be positive");
    if (params.size() != expected.size()) {
        throw ShapeError(fmt::format("{} layer expects {} param blocks, has {}", to_string(kind),
                                     expected.size(), params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].tensor().shape() != expected[i]) {
            throw ShapeError(fmt::format("{} layer param {} has shape {}", to_string(kind), i,
                                         params[i].tensor().shape_string()));
        }
    }
}

std::size_t Layer::param_count() const {
    std::size_t n = 0;
    for (const auto& b : params) n += b.size();
    return n;
}

bool Layer::any_trainable() const {
    return std::any_of(params.begin(), params.end(), [](const ParamBlock& b) { return b.trainable(); });
}

Layer Layer::frozen() const {
    Layer out = *this;
    for (auto& b : out.params) b = b.frozen();
    return out;
}

Layer Layer::copy_for(const Origin& origin) const {
    Layer out = *this;
    for (auto& b : out.params) b = b.copy_for(origin);
    return out;
}

std::string Layer::instance_id() const {
    ContentHasher h;
    h.str(to_string(kind));
    for (const auto& b : params) h.str(b.id());
    return h.hex_digest(32);
}

// Salts are drawn after each tensor so the draw sequence is fixed.
static void add_block(Layer& l, Tensor t, Rng& rng, const Origin& origin) {
    const std::uint64_t salt = rng.next();
    l.params.emplace_back(std::move(t), true, origin, salt);
}

Layer make_linear(std::size_t in, std::size_t out, Rng& rng, const Origin& origin) {
    Layer l{LayerKind::linear, in, out, {}};
    add_block(l, random_matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in)), rng), rng, origin);
    add_block(l, Tensor({out}), rng, origin);
    l.validate();
    return l;
}

Layer make_residual(std::size_t width, Rng& rng, const Origin& origin, bool zero_branch) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(width));
    Layer l{LayerKind::residual, width, width, {}};
    add_block(l, random_matrix(width, width, scale, rng), rng, origin);
    add_block(l, Tensor({width}), rng, origin);
    add_block(l, zero_branch ? Tensor({width, width}) : random_matrix(width, width, 0.5 * scale, rng), rng, origin);
    add_block(l, Tensor({width}), rng, origin);
    l.validate();
    return l;
}

Layer make_normalization(std::size_t width, Rng& rng, const Origin& origin) {
    Layer l{LayerKind::normalization, width, width, {}};
    add_block(l, Tensor({width}, std::vector<float>(width, 1.0f)), rng, origin);
    add_block(l, Tensor({width}), rng, origin);
    l.validate();
    return l;
}

Tensor forward(const Layer& layer, const Tensor& input) {
    check_input(layer, input);
    Tensor out(with_last(input.shape(), layer.out_width));
    forward_rows<float>(layer.kind, layer.in_width, layer.out_width, float_spans(layer), input.values(),
                        input.rows(), out.values());
    return out;
}

LayerGradients backward(const Layer& layer, const Tensor& input, const Tensor& upstream_grad) {
    check_input(layer, input);
    const auto out_shape = with_last(input.shape(), layer.out_width);
    if (upstream_grad.shape() != out_shape) {
        throw ShapeError(fmt::format("{} layer upstream gradient {} does not match output {}",
                                     to_string(layer.kind), upstream_grad.shape_string(),
                                     Tensor(out_shape).shape_string()));
    }
    const std::size_t rows = input.rows();
    const std::size_t in = layer.in_width;
    const std::size_t out = layer.out_width;
    const auto x = input.values();
    const auto g = upstream_grad.values();

    LayerGradients grads;
    grads.input_grad = Tensor(input.shape());
    auto dx = grads.input_grad.values();
    std::vector<Tensor> pg;
    for (const auto& b : layer.params) pg.emplace_back(b.tensor().shape());

    switch (layer.kind) {
    case LayerKind::linear: {
        const auto w = layer.params[0].tensor().values();
        auto dw = pg[0].values();
        auto db = pg[1].values();
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out; ++o) {
                const float go = g[r * out + o];
                db[o] += go;
                for (std::size_t i = 0; i < in; ++i) {
                    dw[o * in + i] += go * x[r * in + i];
                    dx[r * in + i] += go * w[o * in + i];
                }
            }
        }
        break;
    }
    case LayerKind::residual: {
        const auto w1 = layer.params[0].tensor().values();
        const auto b1 = layer.params[1].tensor().values();
        const auto w2 = layer.params[2].tensor().values();
        auto dw1 = pg[0].values();
        auto db1 = pg[1].values();
        auto dw2 = pg[2].values();
        auto db2 = pg[3].values();
        std::vector<float> hidden(in), dh(in);
        for (std::size_t r = 0; r < rows; ++r) {
            const float* xr = x.data() + r * in;
            const float* gr = g.data() + r * in;
            for (std::size_t j = 0; j < in; ++j) {
                float acc = b1[j];
                for (std::size_t i = 0; i < in; ++i) acc += w1[j * in + i] * xr[i];
                hidden[j] = std::tanh(acc);
            }
            std::fill(dh.begin(), dh.end(), 0.0f);
            for (std::size_t o = 0; o < in; ++o) {
                db2[o] += gr[o];
                for (std::size_t j = 0; j < in; ++j) {
                    dw2[o * in + j] += gr[o] * hidden[j];
                    dh[j] += gr[o] * w2[o * in + j];
                }
            }
            for (std::size_t j = 0; j < in; ++j) {
                dh[j] *= 1.0f - hidden[j] * hidden[j];
                db1[j] += dh[j];
            }
            for (std::size_t i = 0; i < in; ++i) dx[r * in + i] = gr[i];
            for (std::size_t j = 0; j < in; ++j) {
                for (std::size_t i = 0; i < in; ++i) {
                    dw1[j * in + i] += dh[j] * xr[i];
                    dx[r * in + i] += dh[j] * w1[j * in + i];
                }
            }
        }
        break;
    }
    case LayerKind::normalization: {
        const auto gamma = layer.params[0].tensor().values();
        auto dgamma = pg[0].values();
        auto dbeta = pg[1].values();
        const float n = static_cast<float>(in);
        std::vector<float> xhat(in), dxhat(in);
        for (std::size_t r = 0; r < rows; ++r) {
            const float* xr = x.data() + r * in;
            const float* gr = g.data() + r * in;
            float mean = 0.0f;
            for (std::size_t i = 0; i < in; ++i) mean += xr[i];
            mean /= n;
            float var = 0.0f;
            for (std::size_t i = 0; i < in; ++i) var += (xr[i] - mean) * (xr[i] - mean);
            var /= n;
            const float inv = 1.0f / std::sqrt(var + kNormEpsilon);
            float sum_d = 0.0f, sum_dx = 0.0f;
            for (std::size_t i = 0; i < in; ++i) {
                xhat[i] = (xr[i] - mean) * inv;
                dgamma[i] += gr[i] * xhat[i];
                dbeta[i] += gr[i];
                dxhat[i] = gr[i] * gamma[i];
                sum_d += dxhat[i];
                sum_dx += dxhat[i] * xhat[i];
            }
            for (std::size_t i = 0; i < in; ++i) {
                dx[r * in + i] = inv / n * (n * dxhat[i] - sum_d - xhat[i] * sum_dx);
            }
        }
        break;
    }
    }

    grads.params.resize(layer.params.size());
    for (std::size_t k = 0; k < layer.params.size(); ++k) {
        if (layer.params[k].trainable()) grads.params[k] = std::move(pg[k]);
    }
    return grads;
}

double grad_check(std::span<const Layer> layers, const Tensor& input, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("grad_check step must be positive");

    // Analytic pass on the float path with d(sum)/d(out) = 1.
    std::vector<Tensor> acts{input};
    for (const auto& l : layers) acts.push_back(forward(l, acts.back()));
    std::vector<LayerGradients> analytic(layers.size());
    Tensor upstream(acts.back().shape(), std::vector<float>(acts.back().size(), 1.0f));
    for (std::size_t k = layers.size(); k-- > 0;) {
        analytic[k] = backward(layers[k], acts[k], upstream);
        upstream = analytic[k].input_grad;
    }

    std::vector<std::vector<std::vector<double>>> params(layers.size());
    for (std::size_t k = 0; k < layers.size(); ++k) {
        for (const auto& b : layers[k].params) {
            params[k].emplace_back(b.tensor().values().begin(), b.tensor().values().end());
        }
    }
    const std::vector<double> x0(input.values().begin(), input.values().end());
    const std::size_t rows = input.rows();

    auto loss = [&]() {
        std::vector<double> cur = x0;
        for (std::size_t k = 0; k < layers.size(); ++k) {
            ParamSpans<double> spans;
            for (const auto& p : params[k]) spans.emplace_back(p);
            std::vector<double> next(rows * layers[k].out_width);
            forward_rows<double>(layers[k].kind, layers[k].in_width, layers[k].out_width, spans, cur, rows, next);
            cur = std::move(next);
        }
        double s = 0.0;
        for (double v : cur) s += v;
        return s;
    };

    double worst = 0.0;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        for (std::size_t pi = 0; pi < layers[k].params.size(); ++pi) {
            if (!analytic[k].params[pi]) continue;
            const auto a = analytic[k].params[pi]->values();
            auto& p = params[k][pi];
            for (std::size_t e = 0; e < p.size(); ++e) {
                const double saved = p[e];
                p[e] = saved + eps;
                const double up = loss();
                p[e] = saved - eps;
                const double down = loss();
                p[e] = saved;
                const double numeric = (up - down) / (2.0 * eps);
                const double an = a[e];
                const double denom = std::max({1.0, std::abs(an), std::abs(numeric)});
                worst = std::max(worst, std::abs(an - numeric) / denom);
            }
        }
    }
    return worst;
}

std::size_t count_params(std::span<const Layer> layers, ParamFilter filter) {
    std::set<std::string> seen;
    std::size_t total = 0;
    for (const auto& l : layers) {
        for (const auto& b : l.params) {
            if (filter == ParamFilter::trainable_only && !b.trainable()) continue;
            if (seen.insert(b.id()).second) total += b.size();
        }
    }
    return total;
}

}  // namespace evopath
