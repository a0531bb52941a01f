// SPDX-License-Identifier: Apache-2.0

#include "evopath/scenedata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>

#include "evopath/rng.hpp"

namespace evopath::scenedata {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Point {
    double x = 0.0;
    double y = 0.0;
};

double uniform_in(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

std::vector<Point> straight_track(Rng& rng, const SceneSpec& s, std::size_t steps) {
    const Point p0{uniform_in(rng, -5, 5), uniform_in(rng, -5, 5)};
    const double heading = uniform_in(rng, 0, kTwoPi);
    const double v = uniform_in(rng, s.speed_min, s.speed_max);
    std::vector<Point> pts(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        pts[t] = {p0.x + v * t * std::cos(heading), p0.y + v * t * std::sin(heading)};
    }
    return pts;
}

std::vector<Point> turn_track(Rng& rng, const SceneSpec& s, std::size_t steps) {
    const Point p0{uniform_in(rng, -5, 5), uniform_in(rng, -5, 5)};
    const double heading = uniform_in(rng, 0, kTwoPi);
    const double v = uniform_in(rng, s.speed_min, s.speed_max);
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double omega = sign * uniform_in(rng, 0.05, 0.15);
    const double radius = v / omega;
    std::vector<Point> pts(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const double th = heading + omega * t;
        pts[t] = {p0.x + radius * (std::sin(th) - std::sin(heading)),
                  p0.y + radius * (std::cos(heading) - std::cos(th))};
    }
    return pts;
}

std::vector<Point> roundabout_track(Rng& rng, const SceneSpec& s, std::size_t steps) {
    const Point c{uniform_in(rng, -3, 3), uniform_in(rng, -3, 3)};
    const double radius = uniform_in(rng, 8, 12);
    const double phase = uniform_in(rng, 0, kTwoPi);
    const double omega = uniform_in(rng, s.speed_min, s.speed_max) / radius;
    std::vector<Point> pts(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const double a = phase + omega * t;
        pts[t] = {c.x + radius * std::cos(a), c.y + radius * std::sin(a)};
    }
    return pts;
}

// Lane offset decays quadratically to zero at the merge step, after which
// the agent travels along the shared heading.
std::vector<Point> merging_track(Rng& rng, const SceneSpec& s, std::size_t steps, double heading, double lane) {
    const double v = uniform_in(rng, s.speed_min, s.speed_max);
    const double along0 = uniform_in(rng, -4, 0) - v * static_cast<double>(steps - 1);
    const double offset = uniform_in(rng, 2, 4);
    const double merge_at = uniform_in(rng, 0.5 * steps, std::max(0.5 * steps, steps - 3.0));
    const double c = std::cos(heading), sn = std::sin(heading);
    std::vector<Point> pts(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        const double along = along0 + v * t;
        const double r = t < merge_at ? 1.0 - t / merge_at : 0.0;
        const double lateral = lane * offset * r * r;
        pts[t] = {along * c - lateral * sn, along * sn + lateral * c};
    }
    return pts;
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line, std::string_view why) {
    throw DatasetError(fmt::format("{}:{}: malformed line ({})", path.string(), line, why));
}

}  // namespace

std::string_view to_string(SceneKind kind) {
    switch (kind) {
    case SceneKind::straight: return "straight";
    case SceneKind::turn: return "turn";
    case SceneKind::roundabout: return "roundabout";
    case SceneKind::merging: return "merging";
    }
    return "?";
}

std::optional<SceneKind> parse_scene_kind(std::string_view name) {
    for (auto k : {SceneKind::straight, SceneKind::turn, SceneKind::roundabout, SceneKind::merging}) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

void SceneSpec::validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("scene sigma must be >= 0");
    if (count < 1) throw std::invalid_argument("scene count must be >= 1");
    if (agents < 1) throw std::invalid_argument("scene agents must be >= 1");
    if (t_obs < 1 || t_pred < 1) throw std::invalid_argument("scene horizon must be >= 1");
    if (!(speed_min > 0.0) || !(speed_max >= speed_min)) throw std::invalid_argument("scene speed range invalid");
}

SceneDataset gen_scene(const SceneSpec& spec) {
    spec.validate();
    SceneDataset data;
    data.scenario = spec.scenario.empty() ? std::string(to_string(spec.kind)) : spec.scenario;
    data.agents = spec.agents;
    data.t_obs = spec.t_obs;
    data.t_pred = spec.t_pred;
    const std::size_t steps = spec.t_obs + spec.t_pred;
    Rng rng(spec.seed);
    for (std::size_t s = 0; s < spec.count; ++s) {
        Sample sample{Tensor({spec.agents, spec.t_obs, 2}), Tensor({spec.agents, spec.t_pred, 2}), std::nullopt};
        const double merge_heading = uniform_in(rng, 0, kTwoPi);
        for (std::size_t n = 0; n < spec.agents; ++n) {
            std::vector<Point> pts;
            switch (spec.kind) {
            case SceneKind::straight: pts = straight_track(rng, spec, steps); break;
            case SceneKind::turn: pts = turn_track(rng, spec, steps); break;
            case SceneKind::roundabout: pts = roundabout_track(rng, spec, steps); break;
            case SceneKind::merging:
                pts = merging_track(rng, spec, steps, merge_heading, n % 2 == 0 ? 1.0 : -1.0);
                break;
            }
            for (std::size_t t = 0; t < steps; ++t) {
                double x = pts[t].x, y = pts[t].y;
                if (spec.sigma > 0.0) {
                    x += spec.sigma * rng.normal();
                    y += spec.sigma * rng.normal();
                }
                Tensor& dst = t < spec.t_obs ? sample.observed : sample.future;
                const std::size_t tt = t < spec.t_obs ? t : t - spec.t_obs;
                const std::size_t len = t < spec.t_obs ? spec.t_obs : spec.t_pred;
                dst[(n * len + tt) * 2] = static_cast<float>(x);
                dst[(n * len + tt) * 2 + 1] = static_cast<float>(y);
            }
        }
        data.samples.push_back(std::move(sample));
    }
    data.splits.train.resize(data.samples.size());
    std::iota(data.splits.train.begin(), data.splits.train.end(), 0);
    return data;
}

SceneDataset load_trajectory_file(const std::filesystem::path& path, std::size_t t_obs, std::size_t t_pred,
                                  std::size_t stride, std::string scenario) {
    if (t_obs < 1 || t_pred < 1) throw std::invalid_argument("horizon must be >= 1");
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    std::ifstream in(path);
    if (!in) throw DatasetError(fmt::format("cannot open trajectory file {}", path.string()));

    struct Row {
        double frame;
        double x;
        double y;
    };
    std::map<double, std::vector<Row>> tracks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        double frame, agent, x, y;
        if (!(ss >> frame >> agent >> x >> y)) malformed(path, lineno, "expected 'frame_id agent_id x y'");
        std::string extra;
        if (ss >> extra) malformed(path, lineno, "trailing fields");
        if (!std::isfinite(frame) || !std::isfinite(agent) || !std::isfinite(x) || !std::isfinite(y)) {
            malformed(path, lineno, "non-finite value");
        }
        tracks[agent].push_back({frame, x, y});
    }

    double step = 0.0;
    for (auto& [agent, rows] : tracks) {
        std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.frame < b.frame; });
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const double d = rows[i].frame - rows[i - 1].frame;
            if (d == 0.0) {
                throw DatasetError(fmt::format("{}: agent {} has duplicate frame {}", path.string(), agent, rows[i].frame));
            }
            if (step == 0.0 || d < step) step = d;
        }
    }

    SceneDataset data;
    data.scenario = scenario.empty() ? path.stem().string() : std::move(scenario);
    data.agents = 1;
    data.t_obs = t_obs;
    data.t_pred = t_pred;
    const std::size_t window = t_obs + t_pred;
    const double tol = 1e-6 * std::max(1.0, step);
    for (const auto& [agent, rows] : tracks) {
        std::size_t run_start = 0;
        for (std::size_t i = 1; i <= rows.size(); ++i) {
            const bool breaks = i == rows.size() || std::abs(rows[i].frame - rows[i - 1].frame - step) > tol;
            if (!breaks) continue;
            const std::size_t run_len = i - run_start;
            for (std::size_t s = 0; run_len >= window && s + window <= run_len; s += stride) {
                Sample sample{Tensor({1, t_obs, 2}), Tensor({1, t_pred, 2}), std::nullopt};
                for (std::size_t t = 0; t < window; ++t) {
                    const Row& r = rows[run_start + s + t];
                    Tensor& dst = t < t_obs ? sample.observed : sample.future;
                    const std::size_t tt = t < t_obs ? t : t - t_obs;
                    dst[tt * 2] = static_cast<float>(r.x);
                    dst[tt * 2 + 1] = static_cast<float>(r.y);
                }
                data.samples.push_back(std::move(sample));
            }
            run_start = i;
        }
    }
    if (data.samples.empty()) {
        throw DatasetError(fmt::format("{}: no agent track spans {} contiguous frames", path.string(), window));
    }
    data.splits.train.resize(data.samples.size());
    std::iota(data.splits.train.begin(), data.splits.train.end(), 0);
    return data;
}

void write_trajectory_file(const SceneDataset& data, const std::filesystem::path& path) {
    auto out = fmt::output_file(path.string());
    const std::size_t steps = data.t_obs + data.t_pred;
    for (std::size_t s = 0; s < data.samples.size(); ++s) {
        const Sample& sample = data.samples[s];
        for (std::size_t n = 0; n < data.agents; ++n) {
            for (std::size_t t = 0; t < steps; ++t) {
                const Tensor& src = t < data.t_obs ? sample.observed : sample.future;
                const std::size_t len = t < data.t_obs ? data.t_obs : data.t_pred;
                const std::size_t tt = t < data.t_obs ? t : t - data.t_obs;
                out.print("{} {} {} {}\n", s * steps + t, s * data.agents + n, src[(n * len + tt) * 2],
                          src[(n * len + tt) * 2 + 1]);
            }
        }
    }
}

SceneDataset split(SceneDataset data, const std::array<double, 3>& fractions, std::uint64_t seed) {
    for (double f : fractions) {
        if (!(f > 0.0)) throw std::invalid_argument("split fractions must be positive");
    }
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must sum to 1");
    }
    const std::size_t n = data.samples.size();
    if (n < 3) throw DatasetError(fmt::format("dataset '{}' has {} samples; split needs at least 3", data.scenario, n));

    // Largest-remainder apportionment.
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = fractions[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact));
        remainder[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++sizes[order[i % 3]];

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 engine(seed);
    std::shuffle(idx.begin(), idx.end(), engine);
    auto first = idx.begin();
    data.splits.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes[0]));
    first += static_cast<std::ptrdiff_t>(sizes[0]);
    data.splits.validation.assign(first, first + static_cast<std::ptrdiff_t>(sizes[1]));
    first += static_cast<std::ptrdiff_t>(sizes[1]);
    data.splits.test.assign(first, idx.end());
    return data;
}

}  // namespace evopath::scenedata
