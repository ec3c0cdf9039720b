#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgs/alignment.hpp"
#include "sgs/losses.hpp"
#include "sgs/rasterizer.hpp"
#include "sgs/scene.hpp"
#include "sgs/trainer.hpp"

namespace sgs {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---- Gaussian clouds (PLY) -------------------------------------------------

enum class PlyFormat { BinaryLittleEndian, Ascii };

/// float32 properties in the order
///   x y z qw qx qy qz ls0 ls1 ls2 opacity_logit f_dc_0..2 f_rest_0..f_rest_{3K-4}
/// preceded by the header line `comment sh_degree N`.
std::string encode_ply(const GaussianCloud& cloud, PlyFormat format = PlyFormat::BinaryLittleEndian);
/// Also accepts double properties and the 3DGS names rot_*, scale_*, opacity.
GaussianCloud decode_ply(const std::string& bytes);

void write_ply(const fs::path& path, const GaussianCloud& cloud, PlyFormat format = PlyFormat::BinaryLittleEndian);
GaussianCloud read_ply(const fs::path& path);

// ---- float planes (PFM) ----------------------------------------------------

struct PfmImage {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;   // row-major, top row first, channels interleaved
};

/// Little-endian (scale -1.0), rows stored bottom to top.
std::string encode_pfm(const PfmImage& image);
PfmImage decode_pfm(const std::string& bytes);

void write_pfm(const fs::path& path, const Grid<double>& plane);
Grid<double> read_pfm(const fs::path& path);

/// Writes <prefix>_x.pfm, _y.pfm, _z.pfm and _conf.pfm.
void write_point_map(const fs::path& prefix, const PointMap& map);
PointMap read_point_map(const fs::path& prefix);

// ---- images (PNG) ----------------------------------------------------------

/// 8-bit RGB, value * 255 rounded after clamping to [0, 1].
void write_png(const fs::path& path, const ImageBuffer& image);
ImageBuffer read_png(const fs::path& path);

// ---- JSON documents --------------------------------------------------------

Json camera_to_json(const Camera& camera);
Camera camera_from_json(const Json& j);

Json train_config_to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys are a config error.
TrainConfig train_config_from_json(const Json& j);

Json loss_config_to_json(const LossConfig& config);
LossConfig loss_config_from_json(const Json& j);
Json render_settings_to_json(const RenderSettings& settings);
RenderSettings render_settings_from_json(const Json& j);

Json read_json(const fs::path& path);
void write_json(const fs::path& path, const Json& j);

void write_train_log_csv(const fs::path& path, const TrainLog& log);
std::vector<TrainRecord> read_train_log_csv(const fs::path& path);

Json metrics_to_json(const std::vector<ViewMetrics>& metrics);

// ---- scene bundles ---------------------------------------------------------

struct BundleView {
    std::string name;
    bool train = true;
    Camera camera;
    ImageBuffer image;
    DepthMap depth;
};

/// On-disk layout:
///   cameras.json            {"cameras": [camera...]}
///   images/<name>.png       reference images
///   depths/<name>.pfm       reference depths
///   pointmaps/<name>_*.pfm  own-frame point maps of training views
///   pairs/eNNN_{a,b}_*.pfm  pairwise point maps
///   graph.json              vertices are training view names in camera order
///   gt_cloud.ply            optional
struct SceneBundle {
    std::vector<BundleView> views;
    ConnectivityGraph graph;          // vertex i is the i-th training view
    std::optional<GaussianCloud> ground_truth;

    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> test_indices() const;
    /// Throws Data when images, depths or the graph disagree with the cameras.
    void validate() const;
};

void write_bundle(const fs::path& dir, const SceneBundle& bundle);
SceneBundle read_bundle(const fs::path& dir);

/// File contents as bytes; Data error when unreadable.
std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

}  // namespace sgs
