// SPDX-License-Identifier: Apache-2.0

#include "evopath/metrics.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace evopath::metrics {
namespace {

using Shape = std::vector<std::size_t>;

void require(bool ok, std::string_view what, const Tensor& pred, const Tensor& gt) {
    if (!ok) {
        throw ShapeError(fmt::format("{}: prediction {} incompatible with ground truth {}", what,
                                     pred.shape_string(), gt.shape_string()));
    }
}

double displacement(const float* a, const float* b, MetricForm form) {
    const double dx = static_cast<double>(a[0]) - b[0];
    const double dy = static_cast<double>(a[1]) - b[1];
    const double sq = dx * dx + dy * dy;
    return form == MetricForm::squared ? sq : std::sqrt(sq);
}

void check_single(std::string_view what, const Tensor& pred, const Tensor& gt) {
    require(pred.rank() == 3 && gt.rank() == 2 && pred.extent(0) >= 1 && pred.extent(2) == 2 &&
                gt.extent(1) == 2 && pred.extent(1) == gt.extent(0) && gt.extent(0) >= 1,
            what, pred, gt);
}

void check_joint(std::string_view what, const Tensor& pred, const Tensor& gt) {
    require(pred.rank() == 4 && gt.rank() == 3 && pred.extent(0) >= 1 && pred.extent(1) == gt.extent(0) &&
                pred.extent(2) == gt.extent(1) && pred.extent(3) == 2 && gt.extent(2) == 2 &&
                gt.extent(0) >= 1 && gt.extent(1) >= 1,
            what, pred, gt);
}

// Mean displacement over all (agent, time) of joint mode k.
double joint_mode_error(const Tensor& pred, const Tensor& gt, std::size_t k, MetricForm form) {
    const std::size_t nt = gt.size() / 2;
    const float* p = pred.values().data() + k * nt * 2;
    const float* g = gt.values().data();
    double sum = 0.0;
    for (std::size_t i = 0; i < nt; ++i) sum += displacement(p + 2 * i, g + 2 * i, form);
    return sum / static_cast<double>(nt);
}

}  // namespace

double ade_k(const Tensor& pred, const Tensor& gt, MetricForm form) {
    check_single("ade_k", pred, gt);
    const std::size_t modes = pred.extent(0), steps = pred.extent(1);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < modes; ++k) {
        double sum = 0.0;
        for (std::size_t t = 0; t < steps; ++t) {
            sum += displacement(pred.values().data() + (k * steps + t) * 2, gt.values().data() + t * 2, form);
        }
        best = std::min(best, sum / static_cast<double>(steps));
    }
    return best;
}

double fde_k(const Tensor& pred, const Tensor& gt, MetricForm form) {
    check_single("fde_k", pred, gt);
    const std::size_t modes = pred.extent(0), steps = pred.extent(1);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < modes; ++k) {
        best = std::min(best, displacement(pred.values().data() + (k * steps + steps - 1) * 2,
                                           gt.values().data() + (steps - 1) * 2, form));
    }
    return form == MetricForm::squared ? best / static_cast<double>(steps) : best;
}

std::size_t best_joint_mode(const Tensor& pred, const Tensor& gt) {
    check_joint("best_joint_mode", pred, gt);
    std::size_t arg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pred.extent(0); ++k) {
        const double e = joint_mode_error(pred, gt, k, MetricForm::standard);
        if (e < best) {
            best = e;
            arg = k;
        }
    }
    return arg;
}

double min_joint_ade(const Tensor& pred, const Tensor& gt, MetricForm form) {
    check_joint("min_joint_ade", pred, gt);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pred.extent(0); ++k) best = std::min(best, joint_mode_error(pred, gt, k, form));
    return best;
}

double miss_rate(const Tensor& pred, const Tensor& gt, double threshold) {
    check_joint("miss_rate", pred, gt);
    if (!(threshold > 0.0)) throw std::invalid_argument("miss_rate threshold must be positive");
    const std::size_t k = best_joint_mode(pred, gt);
    const std::size_t agents = gt.extent(0), steps = gt.extent(1);
    std::size_t misses = 0;
    for (std::size_t n = 0; n < agents; ++n) {
        const std::size_t last = (n * steps + steps - 1) * 2;
        const float* p = pred.values().data() + k * agents * steps * 2 + last;
        if (displacement(p, gt.values().data() + last, MetricForm::standard) > threshold) ++misses;
    }
    return static_cast<double>(misses) / static_cast<double>(agents);
}

std::string to_text(const EvalReport& r) {
    std::string out;
    out += fmt::format("scenario={}\n", r.scenario);
    out += fmt::format("samples={}\n", r.samples);
    out += fmt::format("modes={}\n", r.modes);
    out += fmt::format("ade_k={}\n", r.ade_k);
    out += fmt::format("fde_k={}\n", r.fde_k);
    out += fmt::format("min_joint_ade={}\n", r.min_joint_ade);
    out += fmt::format("miss_rate={}\n", r.miss_rate);
    out += fmt::format("effective_params={}\n", r.effective_params);
    out += fmt::format("additional_params={}\n", r.additional_params);
    out += fmt::format("score={}\n", r.score);
    return out;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
    return {{"scenario", r.scenario},
            {"samples", r.samples},
            {"modes", r.modes},
            {"ade_k", r.ade_k},
            {"fde_k", r.fde_k},
            {"min_joint_ade", r.min_joint_ade},
            {"miss_rate", r.miss_rate},
            {"effective_params", r.effective_params},
            {"additional_params", r.additional_params},
            {"score", r.score}};
}

}  // namespace evopath::metrics
