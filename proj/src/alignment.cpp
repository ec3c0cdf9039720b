#include "sgs/alignment.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "sgs/error.hpp"
#include "sgs/parallel.hpp"

namespace sgs {

namespace {

constexpr int kMinFocalPixels = 10;
constexpr int kMaxFocalIterations = 100;
constexpr double kFocalTolerance = 1e-6;
constexpr double kIrlsDamping = 1e-8;

}  // namespace

FocalEstimate estimate_focal(const PointMap& map) {
    map.validate();
    const double half_w = map.width() / 2.0, half_h = map.height() / 2.0;
    std::vector<Vec2> centered, projected;
    std::vector<double> weight;
    for (int y = 0; y < map.height(); ++y) {
        for (int x = 0; x < map.width(); ++x) {
            const double w = map.confidence.at(x, y);
            if (!(w > 0.0)) continue;
            const Vec3& p = map.points.at(x, y);
            require(p.allFinite() && p.z() > 0.0, ErrorCode::InvalidParameter,
                    "focal estimation needs z > 0 at every confident pixel");
            centered.emplace_back(x - half_w, y - half_h);
            projected.emplace_back(p.x() / p.z(), p.y() / p.z());
            weight.push_back(w);
        }
    }
    require(static_cast<int>(weight.size()) >= kMinFocalPixels, ErrorCode::InsufficientData,
            "focal estimation needs at least 10 confident pixels");

    auto solve = [&](auto weight_of) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < weight.size(); ++i) {
            const double w = weight_of(i);
            num += w * centered[i].dot(projected[i]);
            den += w * projected[i].squaredNorm();
        }
        require(den > 0.0, ErrorCode::EstimationFailed, "focal estimation: degenerate point map");
        return num / den;
    };

    double f = solve([&](std::size_t i) { return weight[i]; });
    require(std::isfinite(f) && f > 0.0, ErrorCode::EstimationFailed, "focal estimation: non-positive initial focal");
    int it = 0;
    while (it < kMaxFocalIterations) {
        ++it;
        const double prev = f;
        f = solve([&](std::size_t i) {
            return weight[i] / ((centered[i] - prev * projected[i]).norm() + kIrlsDamping);
        });
        require(std::isfinite(f) && f > 0.0, ErrorCode::EstimationFailed, "focal estimation diverged");
        if (std::abs(f - prev) / f < kFocalTolerance) break;
    }
    return {f, it};
}

double average_focal(std::span<const double> focals) {
    require(!focals.empty(), ErrorCode::InvalidParameter, "average_focal needs at least one focal");
    double sum = 0.0;
    for (double f : focals) {
        require(std::isfinite(f) && f > 0.0, ErrorCode::InvalidParameter, "focals must be positive");
        sum += f;
    }
    return sum / static_cast<double>(focals.size());
}

Similarity weighted_umeyama(std::span<const Vec3> src, std::span<const Vec3> dst, std::span<const double> weights) {
    require(src.size() == dst.size() && src.size() == weights.size(), ErrorCode::InvalidParameter,
            "umeyama: input sizes differ");
    double total = 0.0;
    Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
    std::size_t used = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!(weights[i] > 0.0)) continue;
        total += weights[i];
        mu_s += weights[i] * src[i];
        mu_d += weights[i] * dst[i];
        ++used;
    }
    require(used >= 3, ErrorCode::InsufficientData, "umeyama: needs at least three weighted points");
    mu_s /= total;
    mu_d /= total;

    Mat3 cov = Mat3::Zero();
    double var_s = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!(weights[i] > 0.0)) continue;
        const Vec3 a = src[i] - mu_s, b = dst[i] - mu_d;
        cov += weights[i] * b * a.transpose();
        var_s += weights[i] * a.squaredNorm();
    }
    cov /= total;
    var_s /= total;
    require(var_s > 0.0, ErrorCode::EstimationFailed, "umeyama: source points coincide");

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 sign = Vec3::Ones();
    if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign.z() = -1.0;
    Similarity out;
    out.rotation = svd.matrixU() * sign.asDiagonal() * svd.matrixV().transpose();
    out.scale = svd.singularValues().dot(sign) / var_s;
    require(std::isfinite(out.scale) && out.scale > 0.0, ErrorCode::EstimationFailed,
            "umeyama: degenerate configuration");
    out.translation = mu_d - out.scale * out.rotation * mu_s;
    return out;
}

void AlignmentOptions::validate() const {
    require(iterations >= 0, ErrorCode::Config, "alignment iterations must be >= 0");
    require(std::isfinite(learning_rate) && learning_rate >= 0.0, ErrorCode::Config,
            "alignment learning rate must be >= 0");
    adam.validate();
}

double EdgeTransform::scale() const { return std::exp(log_scale); }

Vec3 EdgeTransform::apply(const Vec3& p) const {
    return scale() * (rotation_from_quaternion(normalized_quaternion(rotation)) * p + translation);
}

double AlignmentState::scale_product() const {
    double log_sum = 0.0;
    for (const auto& e : edges) log_sum += e.log_scale;
    return std::exp(log_sum);
}

namespace {

void check_graph(const ConnectivityGraph& graph) {
    graph.validate();
    require(!graph.edges.empty(), ErrorCode::InvalidGraph, "alignment needs at least one edge");
    for (const auto& e : graph.edges) {
        e.first_map.validate();
        e.second_map.validate();
        require(e.first_map.points.same_shape(e.second_map.points), ErrorCode::InvalidGraph,
                "edge maps differ in size");
    }
}

std::size_t find_anchor(const ConnectivityGraph& graph) {
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
        if (graph.edges[e].first == 0) return e;
    }
    fail(ErrorCode::InvalidGraph, "view 0 must lead at least one edge");
}

/// Mean-centres the log scales so their product is 1, rescaling P~ to match.
void normalize_gauge(AlignmentState& s) {
    double mean = 0.0;
    for (const auto& e : s.edges) mean += e.log_scale;
    mean /= static_cast<double>(s.edges.size());
    for (auto& e : s.edges) e.log_scale -= mean;
    const double factor = std::exp(-mean);
    for (auto& m : s.world_maps) {
        for (auto& p : m.points.values) p *= factor;
    }
}

void average_world_confidence(const ConnectivityGraph& graph, AlignmentState& s) {
    std::vector<int> count(graph.view_count, 0);
    for (auto& m : s.world_maps) std::fill(m.confidence.values.begin(), m.confidence.values.end(), 0.0);
    for (const auto& e : graph.edges) {
        for (int v : {e.first, e.second}) {
            const auto& src = e.map_for(v).confidence.values;
            auto& dst = s.world_maps[v].confidence.values;
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
            ++count[v];
        }
    }
    for (int v = 0; v < graph.view_count; ++v) {
        for (auto& c : s.world_maps[v].confidence.values) c /= count[v];
    }
}

void read_poses(const ConnectivityGraph& graph, AlignmentState& s) {
    s.view_poses.assign(graph.view_count, std::nullopt);
    s.view_poses[0] = RigidTransform{};
    for (int v = 1; v < graph.view_count; ++v) {
        for (std::size_t e = 0; e < graph.edges.size(); ++e) {
            if (graph.edges[e].first != v) continue;
            const EdgeTransform& t = s.edges[e];
            const Mat3 r = rotation_from_quaternion(normalized_quaternion(t.rotation));
            RigidTransform pose;
            pose.rotation = r.transpose();
            pose.translation = -r.transpose() * (t.scale() * t.translation);
            s.view_poses[v] = pose;
            break;
        }
        if (s.view_poses[v] || graph.view_maps.size() != static_cast<std::size_t>(graph.view_count)) continue;
        const PointMap& own = graph.view_maps[v];
        const PointMap& world = s.world_maps[v];
        if (!own.points.same_shape(world.points)) continue;
        std::vector<double> w(own.points.size());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::min(own.confidence[i], world.confidence[i]);
        try {
            const Similarity sim = weighted_umeyama(own.points.values, world.points.values, w);
            RigidTransform pose;
            pose.rotation = sim.rotation.transpose();
            pose.translation = -sim.rotation.transpose() * sim.translation;
            s.view_poses[v] = pose;
        } catch (const Error&) {
            // leave the pose unknown
        }
    }
}

struct EdgeGradient {
    double objective = 0.0;
    std::vector<Vec3> first, second;   // d/dP~ for the two member views
    Vec4 rotation = Vec4::Zero();
    Vec3 translation = Vec3::Zero();
    double log_scale = 0.0;
};

EdgeGradient edge_term(const GraphEdge& edge, const EdgeTransform& t, const AlignmentState& s, bool with_grad) {
    EdgeGradient g;
    const Vec4 unit = normalized_quaternion(t.rotation);
    const Mat3 r = rotation_from_quaternion(unit);
    const double sigma = t.scale();
    Mat3 d_rot = Mat3::Zero();
    for (int side = 0; side < 2; ++side) {
        const int v = side == 0 ? edge.first : edge.second;
        const PointMap& m = edge.map_for(v);
        const auto& world = s.world_maps[v].points.values;
        std::vector<Vec3>& gp = side == 0 ? g.first : g.second;
        if (with_grad) gp.assign(world.size(), Vec3::Zero());
        for (std::size_t i = 0; i < world.size(); ++i) {
            const double w = m.confidence[i];
            if (!(w > 0.0)) continue;
            const Vec3& p = m.points[i];
            const Vec3 inner = r * p + t.translation;
            const Vec3 res = world[i] - sigma * inner;
            const double n = res.norm();
            g.objective += w * n;
            if (!with_grad || n == 0.0) continue;
            const Vec3 d = (w / n) * res;
            gp[i] = d;
            g.log_scale -= sigma * d.dot(inner);
            g.translation -= sigma * d;
            d_rot -= sigma * d * p.transpose();
        }
    }
    if (with_grad) g.rotation = normalization_gradient(t.rotation, quaternion_gradient(unit, d_rot));
    return g;
}

struct Flat {
    std::vector<double> points, rotation, translation, log_scale;
};

double evaluate(const ConnectivityGraph& graph, const AlignmentState& s, Flat* grad) {
    std::vector<EdgeGradient> parts(graph.edges.size());
    parallel_for(graph.edges.size(), [&](std::size_t e) {
        parts[e] = edge_term(graph.edges[e], s.edges[e], s, grad != nullptr);
    });
    double objective = 0.0;
    for (const auto& p : parts) objective += p.objective;
    if (!grad) return objective;

    std::vector<std::size_t> offset(graph.view_count + 1, 0);
    for (int v = 0; v < graph.view_count; ++v) offset[v + 1] = offset[v] + 3 * s.world_maps[v].points.size();
    grad->points.assign(offset.back(), 0.0);
    grad->rotation.assign(4 * s.edges.size(), 0.0);
    grad->translation.assign(3 * s.edges.size(), 0.0);
    grad->log_scale.assign(s.edges.size(), 0.0);
    for (std::size_t e = 0; e < parts.size(); ++e) {
        const GraphEdge& edge = graph.edges[e];
        for (int side = 0; side < 2; ++side) {
            const int v = side == 0 ? edge.first : edge.second;
            const auto& gp = side == 0 ? parts[e].first : parts[e].second;
            for (std::size_t i = 0; i < gp.size(); ++i) {
                for (int c = 0; c < 3; ++c) grad->points[offset[v] + 3 * i + c] += gp[i][c];
            }
        }
        if (e == s.anchor_edge) {
            grad->log_scale[e] = parts[e].log_scale;
            continue;
        }
        for (int c = 0; c < 4; ++c) grad->rotation[4 * e + c] = parts[e].rotation[c];
        for (int c = 0; c < 3; ++c) grad->translation[3 * e + c] = parts[e].translation[c];
        grad->log_scale[e] = parts[e].log_scale;
    }
    return objective;
}

Flat flatten(const AlignmentState& s) {
    Flat f;
    for (const auto& m : s.world_maps) {
        for (const auto& p : m.points.values) f.points.insert(f.points.end(), {p.x(), p.y(), p.z()});
    }
    for (const auto& e : s.edges) {
        f.rotation.insert(f.rotation.end(), {e.rotation[0], e.rotation[1], e.rotation[2], e.rotation[3]});
        f.translation.insert(f.translation.end(), {e.translation[0], e.translation[1], e.translation[2]});
        f.log_scale.push_back(e.log_scale);
    }
    return f;
}

void unflatten(const Flat& f, AlignmentState& s) {
    std::size_t k = 0;
    for (auto& m : s.world_maps) {
        for (auto& p : m.points.values) {
            p = Vec3(f.points[k], f.points[k + 1], f.points[k + 2]);
            k += 3;
        }
    }
    for (std::size_t e = 0; e < s.edges.size(); ++e) {
        s.edges[e].rotation = normalized_quaternion(
            Vec4(f.rotation[4 * e], f.rotation[4 * e + 1], f.rotation[4 * e + 2], f.rotation[4 * e + 3]));
        s.edges[e].translation = Vec3(f.translation[3 * e], f.translation[3 * e + 1], f.translation[3 * e + 2]);
        s.edges[e].log_scale = f.log_scale[e];
    }
}

struct Moments {
    AdamMoments points, rotation, translation, log_scale;
};

}  // namespace

double alignment_objective(const ConnectivityGraph& graph, const AlignmentState& state) {
    return evaluate(graph, state, nullptr);
}

AlignmentState initialize_alignment(const ConnectivityGraph& graph) {
    check_graph(graph);
    AlignmentState s;
    s.anchor_edge = find_anchor(graph);
    s.edges.assign(graph.edges.size(), EdgeTransform{});
    s.world_maps.resize(graph.view_count);

    std::vector<bool> known(graph.view_count, false), placed(graph.edges.size(), false);
    auto place_view = [&](int v, const PointMap& m, const EdgeTransform& t) {
        PointMap world;
        world.points = Grid<Vec3>(m.width(), m.height(), Vec3::Zero());
        world.confidence = m.confidence;
        for (std::size_t i = 0; i < m.points.size(); ++i) world.points[i] = t.apply(m.points[i]);
        s.world_maps[v] = std::move(world);
        known[v] = true;
    };
    const GraphEdge& anchor = graph.edges[s.anchor_edge];
    place_view(anchor.first, anchor.first_map, s.edges[s.anchor_edge]);
    place_view(anchor.second, anchor.second_map, s.edges[s.anchor_edge]);
    placed[s.anchor_edge] = true;

    for (bool progress = true; progress;) {
        progress = false;
        for (std::size_t e = 0; e < graph.edges.size(); ++e) {
            const GraphEdge& edge = graph.edges[e];
            if (placed[e] || !(known[edge.first] || known[edge.second])) continue;
            std::vector<Vec3> src, dst;
            std::vector<double> w;
            for (int v : {edge.first, edge.second}) {
                if (!known[v]) continue;
                const PointMap& m = edge.map_for(v);
                const PointMap& world = s.world_maps[v];
                require(m.points.same_shape(world.points), ErrorCode::InvalidGraph,
                        "point maps of one view differ in size across edges");
                for (std::size_t i = 0; i < m.points.size(); ++i) {
                    const double wi = std::min(m.confidence[i], world.confidence[i]);
                    if (!(wi > 0.0)) continue;
                    src.push_back(m.points[i]);
                    dst.push_back(world.points[i]);
                    w.push_back(wi);
                }
            }
            const Similarity sim = weighted_umeyama(src, dst, w);
            EdgeTransform& t = s.edges[e];
            t.rotation = quaternion_from_rotation(sim.rotation);
            t.log_scale = std::log(sim.scale);
            t.translation = sim.translation / sim.scale;
            for (int v : {edge.first, edge.second}) {
                if (!known[v]) place_view(v, edge.map_for(v), t);
            }
            placed[e] = true;
            progress = true;
        }
    }
    average_world_confidence(graph, s);
    normalize_gauge(s);
    s.objective = alignment_objective(graph, s);
    read_poses(graph, s);
    return s;
}

AlignmentState global_align(const ConnectivityGraph& graph, const AlignmentOptions& options) {
    return global_align(graph, initialize_alignment(graph), options);
}

AlignmentState global_align(const ConnectivityGraph& graph, AlignmentState s, const AlignmentOptions& options) {
    check_graph(graph);
    options.validate();
    require(s.edges.size() == graph.edges.size() && s.world_maps.size() == static_cast<std::size_t>(graph.view_count),
            ErrorCode::InvalidParameter, "alignment state does not match the graph");
    require(s.anchor_edge < s.edges.size() && graph.edges[s.anchor_edge].first == 0, ErrorCode::InvalidParameter,
            "anchor edge must be led by view 0");
    s.edges[s.anchor_edge].rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    s.edges[s.anchor_edge].translation = Vec3::Zero();
    normalize_gauge(s);
    s.trace.clear();

    Flat grad;
    double objective = evaluate(graph, s, &grad);
    require(std::isfinite(objective), ErrorCode::Diverged, "alignment objective is not finite");
    Moments moments;
    double backoff = 1.0;

    for (int it = 0; it < options.iterations; ++it) {
        double lr = options.learning_rate * backoff;
        if (options.cosine_decay) lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * it / options.iterations));

        AlignmentState candidate = s;
        Moments trial = moments;
        Flat vars = flatten(candidate);
        adam_update(vars.points, grad.points, trial.points, lr, options.adam);
        adam_update(vars.rotation, grad.rotation, trial.rotation, lr, options.adam);
        adam_update(vars.translation, grad.translation, trial.translation, lr, options.adam);
        adam_update(vars.log_scale, grad.log_scale, trial.log_scale, lr, options.adam);
        unflatten(vars, candidate);
        normalize_gauge(candidate);

        Flat trial_grad;
        const double value = evaluate(graph, candidate, &trial_grad);
        require(std::isfinite(value), ErrorCode::Diverged, "alignment objective is not finite");
        AlignmentStep step{it, objective, 1.0, lr, value <= objective};
        if (step.accepted) {
            s = std::move(candidate);
            moments = std::move(trial);
            grad = std::move(trial_grad);
            objective = value;
            step.objective = value;
            backoff = std::min(1.0, backoff * 1.5);
        } else {
            backoff *= 0.5;
        }
        step.scale_product = s.scale_product();
        s.trace.push_back(step);
    }
    s.objective = objective;
    read_poses(graph, s);
    return s;
}

void InitOptions::validate() const {
    require(std::isfinite(confidence_threshold), ErrorCode::Config, "confidence threshold must be finite");
    require(voxel_size >= 0.0, ErrorCode::Config, "voxel size must be >= 0");
    require(sh_degree >= 0 && sh_degree <= kMaxShDegree, ErrorCode::Config, "sh degree must be in [0, 3]");
    require(initial_opacity > 0.0 && initial_opacity < 1.0, ErrorCode::Config, "initial opacity must be in (0, 1)");
    require(fallback_scale > 0.0, ErrorCode::Config, "fallback scale must be > 0");
}

std::vector<double> mean_neighbor_distance(std::span<const Vec3> points, int k) {
    require(k >= 1, ErrorCode::InvalidParameter, "k must be >= 1");
    const std::size_t n = points.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    const std::size_t want = std::min<std::size_t>(k, n - 1);

    Vec3 lo = points[0], hi = points[0];
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double extent = (hi - lo).maxCoeff();
    if (!(extent > 0.0)) return out;  // all points coincide
    const double cell = extent / std::max(1.0, std::cbrt(static_cast<double>(n)));
    std::array<long, 3> dims{};
    for (int c = 0; c < 3; ++c) dims[c] = static_cast<long>((hi[c] - lo[c]) / cell) + 1;
    auto cell_of = [&](const Vec3& p) {
        std::array<long, 3> idx{};
        for (int c = 0; c < 3; ++c) idx[c] = std::min(dims[c] - 1, static_cast<long>((p[c] - lo[c]) / cell));
        return idx;
    };
    auto flat = [&](long x, long y, long z) { return static_cast<std::size_t>((z * dims[1] + y) * dims[0] + x); };
    std::vector<std::vector<std::size_t>> cells(static_cast<std::size_t>(dims[0] * dims[1] * dims[2]));
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = cell_of(points[i]);
        cells[flat(c[0], c[1], c[2])].push_back(i);
    }
    const long max_r = std::max({dims[0], dims[1], dims[2]});

    parallel_for(n, [&](std::size_t i) {
        const auto c = cell_of(points[i]);
        std::vector<double> best;  // ascending, at most `want` entries
        for (long r = 0; r <= max_r; ++r) {
            for (long z = c[2] - r; z <= c[2] + r; ++z) {
                for (long y = c[1] - r; y <= c[1] + r; ++y) {
                    for (long x = c[0] - r; x <= c[0] + r; ++x) {
                        if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != r) continue;
                        if (x < 0 || y < 0 || z < 0 || x >= dims[0] || y >= dims[1] || z >= dims[2]) continue;
                        for (std::size_t j : cells[flat(x, y, z)]) {
                            if (j == i) continue;
                            const double d = (points[j] - points[i]).norm();
                            if (best.size() == want && d >= best.back()) continue;
                            best.insert(std::upper_bound(best.begin(), best.end(), d), d);
                            if (best.size() > want) best.pop_back();
                        }
                    }
                }
            }
            if (best.size() == want && best.back() <= static_cast<double>(r) * cell) break;
        }
        double sum = 0.0;
        for (double d : best) sum += d;
        out[i] = sum / static_cast<double>(best.size());
    });
    return out;
}

GaussianCloud init_gaussians_from_points(std::span<const PointMap> maps, const InitOptions& options) {
    options.validate();
    std::vector<Vec3> positions, colors;
    for (const auto& m : maps) {
        m.validate();
        for (std::size_t i = 0; i < m.points.size(); ++i) {
            if (m.confidence[i] < options.confidence_threshold || !m.points[i].allFinite()) continue;
            positions.push_back(m.points[i]);
            colors.push_back(m.colors ? (*m.colors)[i] : options.default_color);
        }
    }
    require(!positions.empty(), ErrorCode::EmptyCloud, "no point passes the confidence threshold");

    if (options.voxel_size > 0.0) {
        std::map<std::tuple<long, long, long>, std::tuple<Vec3, Vec3, int>> voxels;
        for (std::size_t i = 0; i < positions.size(); ++i) {
            const Vec3 q = (positions[i] / options.voxel_size).array().floor();
            auto& [p, c, count] = voxels.try_emplace({static_cast<long>(q.x()), static_cast<long>(q.y()),
                                                      static_cast<long>(q.z())},
                                                     Vec3::Zero(), Vec3::Zero(), 0)
                                      .first->second;
            p += positions[i];
            c += colors[i];
            ++count;
        }
        positions.clear();
        colors.clear();
        for (const auto& [key, value] : voxels) {
            const auto& [p, c, count] = value;
            positions.push_back(p / count);
            colors.push_back(c / count);
        }
    }

    const std::vector<double> spacing = mean_neighbor_distance(positions, 3);
    GaussianCloud cloud;
    cloud.sh_degree = options.sh_degree;
    const int k = cloud.coeffs_per_channel();
    cloud.primitives.resize(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        GaussianPrimitive& g = cloud.primitives[i];
        g.position = positions[i];
        const double s = positions.size() > 1 ? std::max(spacing[i], 1e-7) : options.fallback_scale;
        g.log_scales = Vec3::Constant(std::log(s));
        g.opacity_logit = logit(options.initial_opacity);
        g.sh.assign(3 * k, 0.0);
        for (int c = 0; c < 3; ++c) g.sh[c * k] = colors[i][c] / kShC0;
    }
    return cloud;
}

}  // namespace sgs
