// SPDX-License-Identifier: Apache-2.0
//
// Best-of-K displacement metrics and the evaluation report.

#pragma once

#include <cstddef>
#include <string>

#include <json.hpp>

#include "evopath/tensor.hpp"

namespace evopath::metrics {

/// `standard`: Euclidean displacement, ADE time-averaged, FDE at the last step.
/// `squared`: squared displacement, and FDE additionally divided by T.
enum class MetricForm { standard, squared };

inline constexpr double kDefaultMissThreshold = 2.0;

/// pred [K,T,2], gt [T,2].
double ade_k(const Tensor& pred, const Tensor& gt, MetricForm form = MetricForm::standard);
double fde_k(const Tensor& pred, const Tensor& gt, MetricForm form = MetricForm::standard);

/// pred [K,N,T,2], gt [N,T,2]. The minimum is over joint modes.
double min_joint_ade(const Tensor& pred, const Tensor& gt, MetricForm form = MetricForm::standard);
/// Index of the joint mode that attains min_joint_ade.
std::size_t best_joint_mode(const Tensor& pred, const Tensor& gt);
/// Fraction of agents whose final displacement under the best joint mode
/// exceeds `threshold`.
double miss_rate(const Tensor& pred, const Tensor& gt, double threshold = kDefaultMissThreshold);

struct EvalReport {
    std::string scenario;
    std::size_t samples = 0;
    std::size_t modes = 0;
    double ade_k = 0.0;
    double fde_k = 0.0;
    double min_joint_ade = 0.0;
    double miss_rate = 0.0;
    std::size_t effective_params = 0;
    std::size_t additional_params = 0;
    double score = 0.0;
};

/// One `key=value` per line; doubles in shortest round-trip form.
std::string to_text(const EvalReport& report);
nlohmann::ordered_json to_json(const EvalReport& report);

}  // namespace evopath::metrics
