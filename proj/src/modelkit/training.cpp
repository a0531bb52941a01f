// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "evopath/model.hpp"
#include "forward_pass.hpp"

namespace evopath {

namespace {

constexpr std::size_t kEvalChunk = 256;

// Per-row minimum over modes of the time-averaged displacement, together with
// the winning mode. `pred` is [rows, K*T*2], `gt` is [rows, T*2].
struct RowFit {
    double ade;
    std::size_t mode;
};

RowFit best_mode(const float* pred, const float* gt, std::size_t K, std::size_t T) {
    RowFit best{std::numeric_limits<double>::infinity(), 0};
    for (std::size_t k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double dx = double(pred[(k * T + t) * 2]) - gt[t * 2];
            const double dy = double(pred[(k * T + t) * 2 + 1]) - gt[t * 2 + 1];
            acc += std::sqrt(dx * dx + dy * dy);
        }
        acc /= double(T);
        if (acc < best.ade || (std::isnan(acc) && !std::isnan(best.ade))) best = {acc, k};
    }
    return best;
}

Tensor joint_prediction(const Tensor& pred, std::size_t b) {
    // [B,N,K,T,2] -> [K,N,T,2] for sample b
    const std::size_t N = pred.extent(1), K = pred.extent(2), T = pred.extent(3);
    Tensor out({K, N, T, 2});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k)
            std::copy_n(pred.values().data() + (((b * N + n) * K + k) * T) * 2, T * 2,
                        out.values().data() + ((k * N + n) * T) * 2);
    return out;
}

Tensor slice_rows(const Tensor& t, std::size_t first, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape));
    std::copy_n(t.values().data() + first * out.size(), out.size(), out.values().data());
    return out;
}

}  // namespace

double wta_loss(const Tensor& predictions, const Tensor& future) {
    if (predictions.rank() != 5 || predictions.extent(4) != 2) {
        throw ShapeError(fmt::format("predictions must be [B,N,K,T,2], got {}", predictions.shape_string()));
    }
    const std::size_t B = predictions.extent(0), N = predictions.extent(1), K = predictions.extent(2),
                      T = predictions.extent(3);
    if (future.rank() != 4 || future.extent(0) != B || future.extent(1) != N || future.extent(2) != T ||
        future.extent(3) != 2) {
        throw ShapeError(fmt::format("future {} does not match predictions {}", future.shape_string(),
                                     predictions.shape_string()));
    }
    if (B * N == 0) throw ShapeError("empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < B * N; ++r) {
        total += best_mode(predictions.values().data() + r * K * T * 2, future.values().data() + r * T * 2, K, T).ade;
    }
    return total / double(B * N);
}

double mean_ade(const ForecastModel& model, const scenedata::SceneDataset& data, std::span<const std::size_t> indices) {
    if (indices.empty()) throw ModelError("mean_ade over an empty sample set");
    double total = 0.0;
    std::size_t rows = 0;
    for (std::size_t first = 0; first < indices.size(); first += kEvalChunk) {
        auto chunk = indices.subspan(first, std::min(kEvalChunk, indices.size() - first));
        auto batch = make_batch(data, chunk);
        auto pred = predict(model, batch);
        const std::size_t R = pred.extent(0) * pred.extent(1), K = pred.extent(2), T = pred.extent(3);
        for (std::size_t r = 0; r < R; ++r) {
            total += best_mode(pred.values().data() + r * K * T * 2, batch.future.values().data() + r * T * 2, K, T).ade;
        }
        rows += R;
    }
    return total / double(rows);
}

metrics::EvalReport evaluate(const ForecastModel& model, const scenedata::SceneDataset& data,
                             std::span<const std::size_t> indices) {
    if (indices.empty()) throw ModelError("evaluate over an empty sample set");
    metrics::EvalReport report;
    report.scenario = data.scenario;
    report.samples = indices.size();
    report.modes = model.modes;
    double ade = 0.0, fde = 0.0, joint = 0.0, miss = 0.0;
    std::size_t agents = 0;
    for (std::size_t first = 0; first < indices.size(); first += kEvalChunk) {
        auto chunk = indices.subspan(first, std::min(kEvalChunk, indices.size() - first));
        auto batch = make_batch(data, chunk);
        auto pred = predict(model, batch);
        const std::size_t N = pred.extent(1), K = pred.extent(2), T = pred.extent(3);
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            Tensor jp = joint_prediction(pred, b);
            Tensor gt = slice_rows(batch.future, b, {N, T, 2});
            for (std::size_t n = 0; n < N; ++n) {
                Tensor agent_pred({K, T, 2});
                for (std::size_t k = 0; k < K; ++k)
                    std::copy_n(jp.values().data() + ((k * N + n) * T) * 2, T * 2,
                                agent_pred.values().data() + k * T * 2);
                Tensor agent_gt = slice_rows(gt, n, {T, 2});
                ade += metrics::ade_k(agent_pred, agent_gt);
                fde += metrics::fde_k(agent_pred, agent_gt);
                ++agents;
            }
            joint += metrics::min_joint_ade(jp, gt);
            miss += metrics::miss_rate(jp, gt);
        }
    }
    report.ade_k = ade / double(agents);
    report.fde_k = fde / double(agents);
    report.min_joint_ade = joint / double(indices.size());
    report.miss_rate = miss / double(indices.size());
    return report;
}

TrainResult train(ForecastModel model, const scenedata::SceneDataset& data, const TrainOptions& options,
                  const HyperState& hyper, std::uint64_t seed) {
    model.validate();
    hyper.validate();
    if (data.splits.validation.empty()) throw ModelError("training needs a non-empty validation split");
    if (options.steps > 0 && data.splits.train.empty()) throw ModelError("training needs a non-empty train split");
    if (options.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (data.t_obs != model.horizon.t_obs || data.t_pred != model.horizon.t_pred) {
        throw ModelError(fmt::format("dataset horizon {}/{} does not match model {}/{}", data.t_obs, data.t_pred,
                                     model.horizon.t_obs, model.horizon.t_pred));
    }

    const double lr = hyper.value(kLearningRate);
    const double wd = hyper.value(kWeightDecay);
    model.hyper = hyper;
    const ForecastModel original = model;

    // Trainable layers are identified by their position in forward order.
    auto slots = model.slots();
    std::vector<std::vector<std::vector<float>>> velocity(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        for (const auto& b : slots[i]->layer.params) velocity[i].emplace_back(b.size(), 0.0f);
    }
    auto stack_trainable = [&](ComponentKind k) {
        for (const auto& s : model.component(k).layers)
            if (s.mode == LayerMode::owned) return true;
        return false;
    };
    const bool traj_needed = stack_trainable(ComponentKind::trajectory_encoder);
    const bool map_needed = stack_trainable(ComponentKind::map_encoder);
    const bool dec_needed = traj_needed || map_needed || stack_trainable(ComponentKind::interaction_decoder);

    std::mt19937_64 shuffle_rng(seed);
    std::vector<std::size_t> order = data.splits.train;
    std::size_t cursor = order.size();
    const std::size_t batch_size = std::min(options.batch_size, std::max<std::size_t>(order.size(), 1));

    auto fail = [&](std::size_t step) {
        TrainResult r{original, std::numeric_limits<double>::infinity(), true, step};
        return r;
    };

    for (std::size_t step = 0; step < options.steps; ++step) {
        if (cursor + batch_size > order.size()) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            cursor = 0;
        }
        auto batch = make_batch(data, std::span<const std::size_t>(order).subspan(cursor, batch_size));
        cursor += batch_size;

        auto tr = detail::run_forward(model, batch);
        const std::size_t rows = tr.anchors.rows(), K = model.modes, T = model.horizon.t_pred;

        // Winner-take-all gradient of the mean best-mode displacement.
        Tensor grad({rows, K * T * 2});
        double loss = 0.0;
        std::vector<float> target(T * 2);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t t = 0; t < T; ++t) {
                target[t * 2] = batch.future[(r * T + t) * 2] - tr.anchors[r * 2];
                target[t * 2 + 1] = batch.future[(r * T + t) * 2 + 1] - tr.anchors[r * 2 + 1];
            }
            const float* p = tr.output.values().data() + r * K * T * 2;
            auto fit = best_mode(p, target.data(), K, T);
            loss += fit.ade;
            const double scale = 1.0 / double(rows * T);
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t o = (fit.mode * T + t) * 2;
                const double dx = double(p[o]) - target[t * 2], dy = double(p[o + 1]) - target[t * 2 + 1];
                const double d = std::sqrt(dx * dx + dy * dy);
                if (d > 0.0) {
                    grad[r * K * T * 2 + o] = float(scale * dx / d);
                    grad[r * K * T * 2 + o + 1] = float(scale * dy / d);
                }
            }
        }
        loss /= double(rows);
        if (!std::isfinite(loss)) return fail(step);

        // Backward, collecting per-slot parameter gradients.
        std::map<const LayerSlot*, std::vector<std::optional<Tensor>>> grads;
        auto head_g = backward(model.head.layer, tr.head_input, grad);
        grads[&model.head] = std::move(head_g.params);
        Tensor upstream = std::move(head_g.input_grad);

        auto back_stack = [&](ComponentKind k, Tensor g) {
            auto& layers = model.component(k).layers;
            const auto& inputs = tr.inputs[static_cast<std::size_t>(k)];
            for (std::size_t i = layers.size(); i-- > 0;) {
                auto lg = backward(layers[i].layer, inputs[i], g);
                grads[&layers[i]] = std::move(lg.params);
                g = std::move(lg.input_grad);
            }
            return g;
        };
        if (dec_needed) {
            Tensor g_joined = back_stack(ComponentKind::interaction_decoder, std::move(upstream));
            const std::size_t ew = tr.encoder_width, jw = g_joined.last_extent(), mw = jw - ew;
            if (traj_needed) {
                Tensor g_enc({rows, ew});
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(g_joined.values().data() + r * jw, ew, g_enc.values().data() + r * ew);
                back_stack(ComponentKind::trajectory_encoder, std::move(g_enc));
            }
            if (map_needed) {
                Tensor g_map({rows, mw});
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(g_joined.values().data() + r * jw + ew, mw, g_map.values().data() + r * mw);
                back_stack(ComponentKind::map_encoder, std::move(g_map));
            }
        }

        // SGD with momentum and coupled weight decay on owned blocks.
        for (std::size_t i = 0; i < slots.size(); ++i) {
            if (slots[i]->mode != LayerMode::owned) continue;
            auto it = grads.find(slots[i]);
            if (it == grads.end()) continue;
            for (std::size_t j = 0; j < slots[i]->layer.params.size(); ++j) {
                const auto& g = it->second.at(j);
                if (!g) continue;
                auto w = slots[i]->layer.params[j].mutable_values();
                auto& v = velocity[i][j];
                for (std::size_t e = 0; e < w.size(); ++e) {
                    const double ge = double((*g)[e]) + wd * w[e];
                    v[e] = float(options.momentum * v[e] + ge);
                    w[e] = float(w[e] - lr * v[e]);
                    if (!std::isfinite(w[e])) return fail(step);
                }
            }
        }
    }

    model.seal();
    const double val = mean_ade(model, data, data.splits.validation);
    if (!std::isfinite(val)) return fail(options.steps);
    return TrainResult{std::move(model), val, false, std::nullopt};
}

}  // namespace evopath
