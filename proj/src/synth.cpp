#include "sgs/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>

#include "sgs/error.hpp"

namespace sgs {

void SynthSpec::validate() const {
    require(primitives >= 1, ErrorCode::Config, "synth: primitives must be >= 1");
    require(bounds > 0.0, ErrorCode::Config, "synth: bounds must be > 0");
    require(sh_degree >= 0 && sh_degree <= kMaxShDegree, ErrorCode::Config, "synth: sh_degree must be in [0, 3]");
    require(opacity_min > 0.0 && opacity_min <= opacity_max && opacity_max < 1.0, ErrorCode::Config,
            "synth: need 0 < opacity_min <= opacity_max < 1");
    require(log_scale_min <= log_scale_max, ErrorCode::Config, "synth: log_scale_min > log_scale_max");
    require(cameras >= 2, ErrorCode::Config, "synth: at least two cameras");
    require(held_out >= 0, ErrorCode::Config, "synth: held_out must be >= 0");
    require(radius > bounds, ErrorCode::Config, "synth: cameras must sit outside the primitive ball");
    require(focal > 0.0 && width >= 1 && height >= 1, ErrorCode::Config, "synth: bad camera intrinsics");
    require(min_alpha > 0.0 && min_alpha <= 1.0, ErrorCode::Config, "synth: min_alpha must be in (0, 1]");
    require(noise >= 0.0 && dropout >= 0.0 && dropout < 1.0, ErrorCode::Config, "synth: bad noise or dropout");
}

Json synth_spec_to_json(const SynthSpec& s) {
    Json j;
    j["primitives"] = s.primitives;
    j["bounds"] = s.bounds;
    j["sh_degree"] = s.sh_degree;
    j["opacity_min"] = s.opacity_min;
    j["opacity_max"] = s.opacity_max;
    j["log_scale_min"] = s.log_scale_min;
    j["log_scale_max"] = s.log_scale_max;
    j["cameras"] = s.cameras;
    j["held_out"] = s.held_out;
    j["radius"] = s.radius;
    j["elevation"] = s.elevation;
    j["focal"] = s.focal;
    j["width"] = s.width;
    j["height"] = s.height;
    j["min_alpha"] = s.min_alpha;
    j["noise"] = s.noise;
    j["dropout"] = s.dropout;
    return j;
}

SynthSpec synth_spec_from_json(const Json& j) {
    require(j.is_object(), ErrorCode::Config, "synth spec: expected an object");
    SynthSpec s;
    const Json defaults = synth_spec_to_json(s);
    for (const auto& [key, value] : j.items()) {
        require(defaults.contains(key), ErrorCode::Config, "synth spec: unknown key '" + key + "'");
        require(value.is_number(), ErrorCode::Config, "synth spec: '" + key + "' must be a number");
    }
    auto num = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    num("primitives", s.primitives);
    num("bounds", s.bounds);
    num("sh_degree", s.sh_degree);
    num("opacity_min", s.opacity_min);
    num("opacity_max", s.opacity_max);
    num("log_scale_min", s.log_scale_min);
    num("log_scale_max", s.log_scale_max);
    num("cameras", s.cameras);
    num("held_out", s.held_out);
    num("radius", s.radius);
    num("elevation", s.elevation);
    num("focal", s.focal);
    num("width", s.width);
    num("height", s.height);
    num("min_alpha", s.min_alpha);
    num("noise", s.noise);
    num("dropout", s.dropout);
    s.validate();
    return s;
}

namespace {

std::string view_name(const char* stem, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%02d", stem, i);
    return buf;
}

Camera ring_camera(const SynthSpec& s, double angle) {
    const Vec3 eye(s.radius * std::sin(angle), s.elevation, s.radius * std::cos(angle));
    return Camera::look_at(s.focal, s.width, s.height, eye, Vec3::Zero());
}

}  // namespace

SceneBundle synthesize(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);

    GaussianCloud truth;
    truth.sh_degree = spec.sh_degree;
    const int k = truth.coeffs_per_channel();
    for (int i = 0; i < spec.primitives; ++i) {
        GaussianPrimitive g;
        Vec3 dir(n(rng), n(rng), n(rng));
        dir.normalize();
        g.position = spec.bounds * std::cbrt(u(rng)) * dir;
        g.rotation = Vec4(n(rng), n(rng), n(rng), n(rng)).normalized();
        for (int c = 0; c < 3; ++c) {
            g.log_scales[c] = spec.log_scale_min + (spec.log_scale_max - spec.log_scale_min) * u(rng);
        }
        g.opacity_logit = logit(spec.opacity_min + (spec.opacity_max - spec.opacity_min) * u(rng));
        g.sh.assign(3 * k, 0.0);
        for (int c = 0; c < 3; ++c) {
            g.sh[c * k] = (0.1 + 0.8 * u(rng)) / kShC0;
            for (int j = 1; j < k; ++j) g.sh[c * k + j] = 0.1 * (u(rng) - 0.5);
        }
        truth.primitives.push_back(std::move(g));
    }

    SceneBundle bundle;
    std::vector<RenderOutput> train_renders;
    for (int v = 0; v < spec.cameras; ++v) {
        BundleView view;
        view.name = view_name("view", v);
        view.camera = ring_camera(spec, 2.0 * std::numbers::pi * v / spec.cameras);
        RenderOutput r = render(truth, view.camera);
        view.image = r.color;
        view.depth = r.depth;
        train_renders.push_back(std::move(r));
        bundle.views.push_back(std::move(view));
    }
    for (int t = 0; t < spec.held_out; ++t) {
        BundleView view;
        view.name = view_name("test", t);
        view.train = false;
        const double slot = static_cast<double>(t) * spec.cameras / spec.held_out + 0.5;
        view.camera = ring_camera(spec, 2.0 * std::numbers::pi * slot / spec.cameras);
        const RenderOutput r = render(truth, view.camera);
        view.image = r.color;
        view.depth = r.depth;
        bundle.views.push_back(std::move(view));
    }

    // exact own-frame points from the rendered expected depth
    std::vector<PointMap> exact(spec.cameras);
    for (int v = 0; v < spec.cameras; ++v) {
        const Camera& cam = bundle.views[v].camera;
        const RenderOutput& r = train_renders[v];
        PointMap& m = exact[v];
        m.points = Grid<Vec3>(cam.width, cam.height, Vec3::Zero());
        m.confidence = Grid<double>(cam.width, cam.height, 0.0);
        for (int y = 0; y < cam.height; ++y) {
            for (int x = 0; x < cam.width; ++x) {
                const Vec3 ray((x - cam.principal_point.x()) / cam.focal, (y - cam.principal_point.y()) / cam.focal,
                               1.0);
                const double a = r.alpha.at(x, y);
                if (a >= spec.min_alpha) {
                    m.points.at(x, y) = (r.depth.at(x, y) / a) * ray;
                    m.confidence.at(x, y) = 1.0 + 4.0 * a;
                } else {
                    m.points.at(x, y) = ray;
                }
            }
        }
    }

    auto perturb = [&](PointMap& m) {
        for (std::size_t i = 0; i < m.points.size(); ++i) {
            if (spec.dropout > 0.0 && u(rng) < spec.dropout) m.confidence[i] = 0.0;
            if (spec.noise > 0.0 && m.confidence[i] > 0.0) {
                m.points[i] += spec.noise * Vec3(n(rng), n(rng), n(rng));
            }
        }
    };

    ConnectivityGraph& graph = bundle.graph;
    graph.view_count = spec.cameras;
    for (int v = 0; v < spec.cameras; ++v) {
        PointMap own;
        own.points = exact[v].points;
        own.confidence = exact[v].confidence;
        perturb(own);
        graph.view_maps.push_back(std::move(own));
    }
    for (int a = 0; a < spec.cameras; ++a) {
        for (int b = a + 1; b < spec.cameras; ++b) {
            GraphEdge edge;
            edge.first = a;
            edge.second = b;
            const double scale = std::exp(u(rng) - 0.5);
            const RigidTransform& frame = bundle.views[a].camera.pose;
            for (int side = 0; side < 2; ++side) {
                const int v = side == 0 ? a : b;
                const RigidTransform to_frame = frame.compose(bundle.views[v].camera.pose.inverse());
                PointMap m;
                m.points = exact[v].points;
                m.confidence = exact[v].confidence;
                for (auto& p : m.points.values) p = scale * to_frame.apply(p);
                perturb(m);
                (side == 0 ? edge.first_map : edge.second_map) = std::move(m);
            }
            graph.edges.push_back(std::move(edge));
        }
    }
    bundle.ground_truth = std::move(truth);
    bundle.validate();
    return bundle;
}

}  // namespace sgs
