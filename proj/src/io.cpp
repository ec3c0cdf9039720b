#include "sgs/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "sgs/error.hpp"

namespace sgs {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Data, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::Data, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::Data, "write failed for " + path.string());
}

namespace {

template <typename T>
T byteswap_value(T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    std::reverse(b, b + sizeof(T));
    std::memcpy(&v, b, sizeof(T));
    return v;
}

template <typename T>
void put_le(std::string& out, T v) {
    if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    out.append(b, sizeof(T));
}

template <typename T>
T get_raw(const char* p, bool little) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if ((std::endian::native == std::endian::little) != little) v = byteswap_value(v);
    return v;
}

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

// ---- PLY -----------------------------------------------------------------

std::vector<std::string> ply_property_names(int sh_degree) {
    std::vector<std::string> names{"x", "y", "z", "qw", "qx", "qy", "qz", "ls0", "ls1", "ls2", "opacity_logit",
                                   "f_dc_0", "f_dc_1", "f_dc_2"};
    const int rest = 3 * (sh_coeff_count(sh_degree) - 1);
    for (int i = 0; i < rest; ++i) names.push_back("f_rest_" + std::to_string(i));
    return names;
}

std::vector<float> ply_row(const GaussianPrimitive& p, int k) {
    std::vector<float> row;
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(p.position[c]));
    for (int c = 0; c < 4; ++c) row.push_back(static_cast<float>(p.rotation[c]));
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(p.log_scales[c]));
    row.push_back(static_cast<float>(p.opacity_logit));
    for (int c = 0; c < 3; ++c) row.push_back(static_cast<float>(p.sh[c * k]));
    for (int c = 0; c < 3; ++c) {
        for (int j = 1; j < k; ++j) row.push_back(static_cast<float>(p.sh[c * k + j]));
    }
    return row;
}

struct PlyProperty {
    std::string name;
    std::string type;
    int size = 0;
};

int ply_type_size(const std::string& t) {
    static const std::map<std::string, int> sizes{
        {"char", 1},   {"uchar", 1},   {"int8", 1},  {"uint8", 1},  {"short", 2},   {"ushort", 2},
        {"int16", 2},  {"uint16", 2},  {"int", 4},   {"uint", 4},   {"int32", 4},   {"uint32", 4},
        {"float", 4},  {"float32", 4}, {"double", 8}, {"float64", 8}};
    const auto it = sizes.find(t);
    require(it != sizes.end(), ErrorCode::Data, "ply: unsupported property type " + t);
    return it->second;
}

double ply_binary_value(const char* p, const std::string& t, bool little) {
    if (t == "float" || t == "float32") return get_raw<float>(p, little);
    if (t == "double" || t == "float64") return get_raw<double>(p, little);
    if (t == "char" || t == "int8") return static_cast<std::int8_t>(*p);
    if (t == "uchar" || t == "uint8") return static_cast<std::uint8_t>(*p);
    if (t == "short" || t == "int16") return get_raw<std::int16_t>(p, little);
    if (t == "ushort" || t == "uint16") return get_raw<std::uint16_t>(p, little);
    if (t == "int" || t == "int32") return get_raw<std::int32_t>(p, little);
    return get_raw<std::uint32_t>(p, little);
}

/// Storage slot of a property name; -1 when the property is ignored.
/// 0-2 position, 3-6 rotation, 7-9 log scales, 10 opacity, 11-13 dc, 100+i rest.
int ply_slot(const std::string& n) {
    static const std::map<std::string, int> slots{
        {"x", 0},       {"y", 1},       {"z", 2},        {"qw", 3},       {"qx", 4},        {"qy", 5},
        {"qz", 6},      {"rot_0", 3},   {"rot_1", 4},    {"rot_2", 5},    {"rot_3", 6},     {"ls0", 7},
        {"ls1", 8},     {"ls2", 9},     {"scale_0", 7},  {"scale_1", 8},  {"scale_2", 9},   {"opacity_logit", 10},
        {"opacity", 10}, {"f_dc_0", 11}, {"f_dc_1", 12},  {"f_dc_2", 13}};
    if (const auto it = slots.find(n); it != slots.end()) return it->second;
    if (n.rfind("f_rest_", 0) == 0) {
        const std::string idx = n.substr(7);
        require(!idx.empty() && idx.find_first_not_of("0123456789") == std::string::npos, ErrorCode::Data,
                "ply: bad property " + n);
        return 100 + std::stoi(idx);
    }
    return -1;
}

}  // namespace

std::string encode_ply(const GaussianCloud& cloud, PlyFormat format) {
    cloud.validate();
    const int k = cloud.coeffs_per_channel();
    std::string out = "ply\n";
    out += format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n";
    out += "comment sh_degree " + std::to_string(cloud.sh_degree) + "\n";
    out += "element vertex " + std::to_string(cloud.size()) + "\n";
    for (const auto& n : ply_property_names(cloud.sh_degree)) out += "property float " + n + "\n";
    out += "end_header\n";
    for (const auto& p : cloud.primitives) {
        const std::vector<float> row = ply_row(p, k);
        if (format == PlyFormat::Ascii) {
            for (std::size_t i = 0; i < row.size(); ++i) {
                if (i) out += ' ';
                out += format_float(row[i]);
            }
            out += '\n';
        } else {
            for (float v : row) put_le(out, v);
        }
    }
    return out;
}

GaussianCloud decode_ply(const std::string& bytes) {
    const std::size_t header_end = bytes.find("end_header\n");
    require(bytes.rfind("ply\n", 0) == 0 && header_end != std::string::npos, ErrorCode::Data, "ply: bad header");
    std::istringstream header(bytes.substr(0, header_end));
    std::string line, format;
    std::optional<int> declared_degree;
    long long count = -1;
    std::vector<PlyProperty> props;
    bool in_vertex = false;
    std::getline(header, line);
    while (std::getline(header, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            ls >> format;
        } else if (word == "comment") {
            std::string key;
            int value = 0;
            if (ls >> key >> value && key == "sh_degree") declared_degree = value;
        } else if (word == "element") {
            std::string name;
            long long n = 0;
            ls >> name >> n;
            in_vertex = name == "vertex";
            if (in_vertex) {
                count = n;
            } else {
                require(n == 0, ErrorCode::Data, "ply: unsupported element " + name);
            }
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            require(type != "list", ErrorCode::Data, "ply: list properties are not supported");
            if (in_vertex) props.push_back({name, type, ply_type_size(type)});
        } else if (!word.empty() && word != "obj_info") {
            fail(ErrorCode::Data, "ply: unexpected header line '" + line + "'");
        }
    }
    require(count >= 0, ErrorCode::Data, "ply: missing vertex element");
    const bool ascii = format == "ascii";
    const bool little = format == "binary_little_endian";
    require(ascii || little || format == "binary_big_endian", ErrorCode::Data, "ply: unknown format " + format);

    std::vector<int> slot(props.size());
    std::set<int> seen;
    int rest = 0;
    for (std::size_t i = 0; i < props.size(); ++i) {
        slot[i] = ply_slot(props[i].name);
        if (slot[i] < 0) continue;
        require(seen.insert(slot[i]).second, ErrorCode::Data, "ply: duplicate property " + props[i].name);
        if (slot[i] >= 100) rest = std::max(rest, slot[i] - 99);
    }
    for (int s = 0; s < 14; ++s) require(seen.count(s), ErrorCode::Data, "ply: missing a required property");
    require(static_cast<int>(seen.size()) == 14 + rest, ErrorCode::Data, "ply: f_rest properties are not contiguous");
    require(rest % 3 == 0, ErrorCode::Data, "ply: f_rest count must be a multiple of 3");
    const int k = rest / 3 + 1;
    int degree = 0;
    while (sh_coeff_count(degree) < k && degree < kMaxShDegree) ++degree;
    require(sh_coeff_count(degree) == k, ErrorCode::Data, "ply: f_rest count does not match any SH degree");
    require(!declared_degree || *declared_degree == degree, ErrorCode::Data,
            "ply: sh_degree comment disagrees with the f_rest properties");

    GaussianCloud cloud;
    cloud.sh_degree = degree;
    cloud.primitives.resize(static_cast<std::size_t>(count));
    std::vector<double> values(props.size());
    std::size_t pos = header_end + std::strlen("end_header\n");
    std::size_t row_bytes = 0;
    for (const auto& p : props) row_bytes += p.size;
    std::istringstream text(ascii ? bytes.substr(pos) : std::string());
    if (!ascii) {
        require(bytes.size() - pos >= row_bytes * static_cast<std::size_t>(count), ErrorCode::Data,
                "ply: truncated vertex data");
    }

    for (auto& g : cloud.primitives) {
        if (ascii) {
            for (auto& v : values) {
                std::string tok;
                require(static_cast<bool>(text >> tok), ErrorCode::Data, "ply: truncated vertex data");
                char* end = nullptr;
                v = std::strtod(tok.c_str(), &end);
                require(end && *end == '\0', ErrorCode::Data, "ply: bad number '" + tok + "'");
            }
        } else {
            for (std::size_t i = 0; i < props.size(); ++i) {
                values[i] = ply_binary_value(bytes.data() + pos, props[i].type, little);
                pos += props[i].size;
            }
        }
        g.sh.assign(3 * k, 0.0);
        for (std::size_t i = 0; i < props.size(); ++i) {
            const int s = slot[i];
            const double v = values[i];
            if (s < 0) continue;
            if (s < 3) g.position[s] = v;
            else if (s < 7) g.rotation[s - 3] = v;
            else if (s < 10) g.log_scales[s - 7] = v;
            else if (s == 10) g.opacity_logit = v;
            else if (s < 14) g.sh[(s - 11) * k] = v;
            else {
                const int r = s - 100;
                g.sh[(r / (k - 1)) * k + 1 + r % (k - 1)] = v;
            }
        }
        require(g.rotation.norm() > 0.0, ErrorCode::Data, "ply: zero quaternion");
        if (std::abs(g.rotation.norm() - 1.0) > 1e-6) g.rotation = normalized_quaternion(g.rotation);
    }
    return cloud;
}

void write_ply(const fs::path& path, const GaussianCloud& cloud, PlyFormat format) {
    write_file(path, encode_ply(cloud, format));
}

GaussianCloud read_ply(const fs::path& path) { return decode_ply(read_file(path)); }

// ---- PFM -------------------------------------------------------------------

std::string encode_pfm(const PfmImage& image) {
    require(image.channels == 1 || image.channels == 3, ErrorCode::InvalidParameter, "pfm: 1 or 3 channels");
    require(image.data.size() == static_cast<std::size_t>(image.width) * image.height * image.channels,
            ErrorCode::InvalidParameter, "pfm: data size mismatch");
    std::string out = image.channels == 1 ? "Pf\n" : "PF\n";
    out += std::to_string(image.width) + " " + std::to_string(image.height) + "\n-1.0\n";
    const std::size_t row = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = image.height - 1; y >= 0; --y) {
        for (std::size_t i = 0; i < row; ++i) put_le(out, image.data[y * row + i]);
    }
    return out;
}

PfmImage decode_pfm(const std::string& bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        require(pos > start, ErrorCode::Data, "pfm: truncated header");
        return bytes.substr(start, pos - start);
    };
    PfmImage img;
    const std::string magic = token();
    require(magic == "Pf" || magic == "PF", ErrorCode::Data, "pfm: bad magic");
    img.channels = magic == "Pf" ? 1 : 3;
    try {
        img.width = std::stoi(token());
        img.height = std::stoi(token());
    } catch (const std::exception&) {
        fail(ErrorCode::Data, "pfm: bad dimensions");
    }
    const std::string scale_tok = token();
    double scale = 0.0;
    try {
        scale = std::stod(scale_tok);
    } catch (const std::exception&) {
        fail(ErrorCode::Data, "pfm: bad scale");
    }
    require(img.width > 0 && img.height > 0 && scale != 0.0, ErrorCode::Data, "pfm: bad header values");
    ++pos;  // single whitespace byte before the raster
    const bool little = scale < 0.0;
    const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
    require(bytes.size() >= pos + row * img.height * 4, ErrorCode::Data, "pfm: truncated raster");
    img.data.resize(row * img.height);
    for (int y = img.height - 1; y >= 0; --y) {
        for (std::size_t i = 0; i < row; ++i) {
            img.data[y * row + i] = get_raw<float>(bytes.data() + pos, little);
            pos += 4;
        }
    }
    return img;
}

void write_pfm(const fs::path& path, const Grid<double>& plane) {
    PfmImage img{plane.width, plane.height, 1, {}};
    img.data.reserve(plane.size());
    for (double v : plane.values) img.data.push_back(static_cast<float>(v));
    write_file(path, encode_pfm(img));
}

Grid<double> read_pfm(const fs::path& path) {
    const PfmImage img = decode_pfm(read_file(path));
    require(img.channels == 1, ErrorCode::Data, path.string() + ": expected a single-channel PFM");
    Grid<double> g(img.width, img.height, 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = img.data[i];
    return g;
}

namespace {

fs::path with_suffix(const fs::path& prefix, const char* suffix) {
    return prefix.parent_path() / (prefix.filename().string() + suffix);
}

}  // namespace

void write_point_map(const fs::path& prefix, const PointMap& map) {
    map.validate();
    const char* suffix[3] = {"_x.pfm", "_y.pfm", "_z.pfm"};
    for (int c = 0; c < 3; ++c) {
        Grid<double> plane(map.width(), map.height(), 0.0);
        for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = map.points[i][c];
        write_pfm(with_suffix(prefix, suffix[c]), plane);
    }
    write_pfm(with_suffix(prefix, "_conf.pfm"), map.confidence);
}

PointMap read_point_map(const fs::path& prefix) {
    const Grid<double> x = read_pfm(with_suffix(prefix, "_x.pfm"));
    const Grid<double> y = read_pfm(with_suffix(prefix, "_y.pfm"));
    const Grid<double> z = read_pfm(with_suffix(prefix, "_z.pfm"));
    PointMap m;
    m.confidence = read_pfm(with_suffix(prefix, "_conf.pfm"));
    require(x.same_shape(y) && x.same_shape(z) && x.same_shape(m.confidence), ErrorCode::Data,
            prefix.string() + ": point map planes differ in size");
    m.points = Grid<Vec3>(x.width, x.height, Vec3::Zero());
    for (std::size_t i = 0; i < x.size(); ++i) m.points[i] = Vec3(x[i], y[i], z[i]);
    try {
        m.validate();
    } catch (const Error& e) {
        fail(ErrorCode::Data, prefix.string() + ": " + e.what());
    }
    return m;
}

// ---- PNG -------------------------------------------------------------------

void write_png(const fs::path& path, const ImageBuffer& image) {
    require(image.width > 0 && image.height > 0, ErrorCode::InvalidParameter, "png: empty image");
    std::vector<unsigned char> px(image.size() * 3);
    for (std::size_t i = 0; i < image.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(image[i][c], 0.0, 1.0);
            px[3 * i + c] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    const int ok = png_image_write_to_file(&png, path.c_str(), 0, px.data(), 0, nullptr);
    const std::string message = png.message;
    png_image_free(&png);
    require(ok != 0, ErrorCode::Data, "png: cannot write " + path.string() + ": " + message);
}

ImageBuffer read_png(const fs::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    require(png_image_begin_read_from_file(&png, path.c_str()) != 0, ErrorCode::Data,
            "png: cannot read " + path.string() + ": " + png.message);
    png.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> px(PNG_IMAGE_SIZE(png));
    const bool ok = png_image_finish_read(&png, nullptr, px.data(), 0, nullptr) != 0;
    const std::string message = png.message;
    const int w = static_cast<int>(png.width), h = static_cast<int>(png.height);
    png_image_free(&png);
    require(ok, ErrorCode::Data, "png: cannot decode " + path.string() + ": " + message);
    ImageBuffer img = make_image(w, h);
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = Vec3(px[3 * i], px[3 * i + 1], px[3 * i + 2]) / 255.0;
    }
    return img;
}

// ---- JSON ------------------------------------------------------------------

namespace {

/// Reads keys from one JSON object and rejects any key nobody asked for.
class Fields {
public:
    Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        require(j.is_object(), ErrorCode::Config, where_ + ": expected an object");
    }

    template <typename T>
    bool read(const std::string& key, T& out) {
        const auto it = j_.find(key);
        if (it == j_.end()) return false;
        seen_.insert(key);
        try {
            if constexpr (std::is_same_v<T, bool>) {
                require(it->is_boolean(), ErrorCode::Config, where_ + "." + key + ": expected a boolean");
            } else if constexpr (std::is_arithmetic_v<T>) {
                require(it->is_number(), ErrorCode::Config, where_ + "." + key + ": expected a number");
            }
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            fail(ErrorCode::Config, where_ + "." + key + ": wrong type");
        }
        return true;
    }

    const Json* section(const std::string& key) {
        const auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            require(seen_.count(key) != 0, ErrorCode::Config, where_ + ": unknown key '" + key + "'");
        }
    }

    const std::string& where() const { return where_; }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

template <typename Fn>
auto as_config(Fn fn) {
    try {
        return fn();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Config) throw;
        throw Error(ErrorCode::Config, e.what());
    }
}

}  // namespace

Json camera_to_json(const Camera& c) {
    Json j;
    j["width"] = c.width;
    j["height"] = c.height;
    j["focal"] = c.focal;
    j["cx"] = c.principal_point.x();
    j["cy"] = c.principal_point.y();
    Json rot = Json::array();
    for (int r = 0; r < 3; ++r) rot.push_back({c.pose.rotation(r, 0), c.pose.rotation(r, 1), c.pose.rotation(r, 2)});
    j["rotation"] = rot;
    j["translation"] = {c.pose.translation.x(), c.pose.translation.y(), c.pose.translation.z()};
    return j;
}

Camera camera_from_json(const Json& j) {
    try {
        require(j.is_object(), ErrorCode::Data, "camera: expected an object");
        Camera c;
        c.width = j.at("width").get<int>();
        c.height = j.at("height").get<int>();
        c.focal = j.at("focal").get<double>();
        c.principal_point = Vec2(j.value("cx", c.width / 2.0), j.value("cy", c.height / 2.0));
        const Json& rot = j.at("rotation");
        require(rot.is_array() && rot.size() == 3, ErrorCode::Data, "camera: rotation must be 3 rows");
        for (int r = 0; r < 3; ++r) {
            require(rot[r].is_array() && rot[r].size() == 3, ErrorCode::Data, "camera: rotation rows need 3 values");
            for (int col = 0; col < 3; ++col) c.pose.rotation(r, col) = rot[r][col].get<double>();
        }
        const Json& t = j.at("translation");
        require(t.is_array() && t.size() == 3, ErrorCode::Data, "camera: translation needs 3 values");
        for (int r = 0; r < 3; ++r) c.pose.translation[r] = t[r].get<double>();
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Data, std::string("camera: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::Data) throw;
        fail(ErrorCode::Data, std::string("camera: ") + e.what());
    }
}

Json loss_config_to_json(const LossConfig& c) {
    Json j;
    j["lambda_depth"] = c.lambda_depth;
    j["lambda_gpp"] = c.lambda_gpp;
    j["base_quantile"] = c.base_quantile;
    j["quantile_range"] = c.quantile_range;
    j["patch_size"] = c.patch_size;
    j["ssim_weight"] = c.ssim_weight;
    j["use_depth_mask"] = c.use_depth_mask;
    return j;
}

LossConfig loss_config_from_json(const Json& j) {
    LossConfig c;
    Fields f(j, "loss");
    f.read("lambda_depth", c.lambda_depth);
    f.read("lambda_gpp", c.lambda_gpp);
    f.read("base_quantile", c.base_quantile);
    f.read("quantile_range", c.quantile_range);
    f.read("patch_size", c.patch_size);
    f.read("ssim_weight", c.ssim_weight);
    f.read("use_depth_mask", c.use_depth_mask);
    f.finish();
    c.validate();
    return c;
}

Json render_settings_to_json(const RenderSettings& s) {
    Json j;
    j["low_pass"] = s.low_pass;
    j["near_plane"] = s.near_plane;
    j["smoothing_scale"] = s.smoothing_scale;
    j["min_transmittance"] = s.min_transmittance;
    j["support_sigmas"] = s.support_sigmas;
    j["tile_size"] = s.tile_size;
    return j;
}

RenderSettings render_settings_from_json(const Json& j) {
    RenderSettings s;
    Fields f(j, "render");
    f.read("low_pass", s.low_pass);
    f.read("near_plane", s.near_plane);
    f.read("smoothing_scale", s.smoothing_scale);
    f.read("min_transmittance", s.min_transmittance);
    f.read("support_sigmas", s.support_sigmas);
    f.read("tile_size", s.tile_size);
    f.finish();
    require(s.low_pass >= 0.0 && s.near_plane > 0.0 && s.smoothing_scale >= 0.0 && s.min_transmittance >= 0.0 &&
                s.min_transmittance < 1.0 && s.support_sigmas > 0.0 && s.tile_size >= 1,
            ErrorCode::Config, "render: value out of range");
    return s;
}

Json train_config_to_json(const TrainConfig& c) {
    Json j;
    j["iterations"] = c.iterations;
    j["seed"] = c.seed;
    j["schedule"] = c.schedule == ViewSchedule::RoundRobin ? "round_robin" : "random";
    j["checkpoint_every"] = c.checkpoint_every;
    const auto& lr = c.learning_rates;
    j["learning_rates"] = {{"position", lr.position},   {"position_final", c.position_lr_final},
                           {"rotation", lr.rotation},   {"log_scales", lr.log_scale},
                           {"opacity", lr.opacity},     {"sh", lr.sh}};
    j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}};
    j["loss"] = loss_config_to_json(c.loss);
    j["render"] = render_settings_to_json(c.render);
    return j;
}

TrainConfig train_config_from_json(const Json& j) {
    TrainConfig c;
    Fields f(j, "config");
    f.read("iterations", c.iterations);
    f.read("seed", c.seed);
    std::string schedule;
    if (f.read("schedule", schedule)) {
        require(schedule == "round_robin" || schedule == "random", ErrorCode::Config,
                "config.schedule must be round_robin or random");
        c.schedule = schedule == "random" ? ViewSchedule::Random : ViewSchedule::RoundRobin;
    }
    f.read("checkpoint_every", c.checkpoint_every);
    if (const Json* s = f.section("learning_rates")) {
        Fields g(*s, "learning_rates");
        g.read("position", c.learning_rates.position);
        g.read("position_final", c.position_lr_final);
        g.read("rotation", c.learning_rates.rotation);
        g.read("log_scales", c.learning_rates.log_scale);
        g.read("opacity", c.learning_rates.opacity);
        g.read("sh", c.learning_rates.sh);
        g.finish();
    }
    if (const Json* s = f.section("adam")) {
        Fields g(*s, "adam");
        g.read("beta1", c.adam.beta1);
        g.read("beta2", c.adam.beta2);
        g.read("epsilon", c.adam.epsilon);
        g.finish();
    }
    if (const Json* s = f.section("loss")) c.loss = loss_config_from_json(*s);
    if (const Json* s = f.section("render")) c.render = render_settings_from_json(*s);
    f.finish();
    as_config([&] {
        c.validate();
        return 0;
    });
    return c;
}

Json read_json(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::Data, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

void write_train_log_csv(const fs::path& path, const TrainLog& log) {
    std::string out = "iteration,view,total,rgb,depth,gpp,seconds\n";
    char buf[256];
    for (const auto& r : log.records) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.iteration, r.view, r.total, r.rgb,
                      r.depth, r.gpp, r.seconds);
        out += buf;
    }
    write_file(path, out);
}

std::vector<TrainRecord> read_train_log_csv(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    std::getline(in, line);
    require(line == "iteration,view,total,rgb,depth,gpp,seconds", ErrorCode::Data, "train log: bad header");
    std::vector<TrainRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrainRecord r;
        const int n = std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf,%lf,%lf", &r.iteration, &r.view, &r.total, &r.rgb,
                                  &r.depth, &r.gpp, &r.seconds);
        require(n == 7, ErrorCode::Data, "train log: bad row '" + line + "'");
        out.push_back(r);
    }
    return out;
}

Json metrics_to_json(const std::vector<ViewMetrics>& metrics) {
    Json rows = Json::array();
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (const auto& m : metrics) {
        rows.push_back({{"view", m.view}, {"psnr_db", m.psnr_db}, {"ssim", m.ssim}, {"exact_match", m.exact_match}});
        psnr_sum += m.psnr_db;
        ssim_sum += m.ssim;
    }
    Json j;
    j["views"] = rows;
    const double n = static_cast<double>(std::max<std::size_t>(1, metrics.size()));
    j["mean_psnr_db"] = psnr_sum / n;
    j["mean_ssim"] = ssim_sum / n;
    return j;
}

// ---- bundles ---------------------------------------------------------------

std::vector<std::size_t> SceneBundle::train_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (views[i].train) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> SceneBundle::test_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (!views[i].train) out.push_back(i);
    }
    return out;
}

void SceneBundle::validate() const {
    std::set<std::string> names;
    for (const auto& v : views) {
        require(!v.name.empty() && v.name.find('/') == std::string::npos, ErrorCode::Data,
                "bundle: view names must be plain file stems");
        require(names.insert(v.name).second, ErrorCode::Data, "bundle: duplicate view " + v.name);
        require(v.image.width == v.camera.width && v.image.height == v.camera.height, ErrorCode::Data,
                "bundle: image size of " + v.name + " does not match its camera");
        require(v.depth.same_shape(v.image), ErrorCode::Data, "bundle: depth size of " + v.name + " differs");
    }
    if (graph.view_count == 0 && graph.edges.empty()) return;
    const auto train = train_indices();
    require(graph.view_count == static_cast<int>(train.size()), ErrorCode::Data,
            "bundle: graph vertices must be the training views");
    try {
        graph.validate();
    } catch (const Error& e) {
        fail(ErrorCode::Data, std::string("bundle: ") + e.what());
    }
    for (const auto& e : graph.edges) {
        for (int v : {e.first, e.second}) {
            const Camera& cam = views[train[v]].camera;
            require(e.map_for(v).width() == cam.width && e.map_for(v).height() == cam.height, ErrorCode::Data,
                    "bundle: pairwise map size does not match its camera");
        }
    }
}

namespace {

std::string edge_prefix(std::size_t e, char side) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pairs/e%03zu_%c", e, side);
    return buf;
}

}  // namespace

void write_bundle(const fs::path& dir, const SceneBundle& bundle) {
    bundle.validate();
    fs::create_directories(dir);
    Json cams = Json::array();
    for (const auto& v : bundle.views) {
        Json c;
        c["name"] = v.name;
        c["split"] = v.train ? "train" : "test";
        const Json cam = camera_to_json(v.camera);
        for (const auto& [key, value] : cam.items()) c[key] = value;
        cams.push_back(c);
        write_png(dir / "images" / (v.name + ".png"), v.image);
        write_pfm(dir / "depths" / (v.name + ".pfm"), v.depth);
    }
    write_json(dir / "cameras.json", Json{{"cameras", cams}});

    const auto train = bundle.train_indices();
    if (bundle.graph.view_count > 0) {
        Json vertices = Json::array(), edges = Json::array(), own = Json::array();
        for (std::size_t i : train) vertices.push_back(bundle.views[i].name);
        for (std::size_t e = 0; e < bundle.graph.edges.size(); ++e) {
            const GraphEdge& edge = bundle.graph.edges[e];
            const std::string a = edge_prefix(e, 'a'), b = edge_prefix(e, 'b');
            write_point_map(dir / a, edge.first_map);
            write_point_map(dir / b, edge.second_map);
            edges.push_back({{"views", {edge.first, edge.second}}, {"maps", {a, b}}});
        }
        for (std::size_t v = 0; v < bundle.graph.view_maps.size(); ++v) {
            const std::string prefix = "pointmaps/" + bundle.views[train[v]].name;
            write_point_map(dir / prefix, bundle.graph.view_maps[v]);
            own.push_back(prefix);
        }
        Json g{{"vertices", vertices}, {"edges", edges}};
        if (!own.empty()) g["view_maps"] = own;
        write_json(dir / "graph.json", g);
    }
    if (bundle.ground_truth) write_ply(dir / "gt_cloud.ply", *bundle.ground_truth);
}

SceneBundle read_bundle(const fs::path& dir) {
    require(fs::is_directory(dir), ErrorCode::Data, "bundle: " + dir.string() + " is not a directory");
    SceneBundle b;
    const Json cams = read_json(dir / "cameras.json");
    try {
        for (const Json& c : cams.at("cameras")) {
            BundleView v;
            v.name = c.at("name").get<std::string>();
            const std::string split = c.value("split", std::string("train"));
            require(split == "train" || split == "test", ErrorCode::Data, "bundle: split must be train or test");
            v.train = split == "train";
            v.camera = camera_from_json(c);
            v.image = read_png(dir / "images" / (v.name + ".png"));
            v.depth = read_pfm(dir / "depths" / (v.name + ".pfm"));
            b.views.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Data, std::string("cameras.json: ") + e.what());
    }

    if (fs::exists(dir / "graph.json")) {
        const Json g = read_json(dir / "graph.json");
        const auto train = b.train_indices();
        try {
            const auto& vertices = g.at("vertices");
            require(vertices.size() == train.size(), ErrorCode::Data, "graph.json: vertices must list training views");
            for (std::size_t i = 0; i < train.size(); ++i) {
                require(vertices[i].get<std::string>() == b.views[train[i]].name, ErrorCode::Data,
                        "graph.json: vertex order must follow the training cameras");
            }
            b.graph.view_count = static_cast<int>(train.size());
            for (const Json& e : g.at("edges")) {
                GraphEdge edge;
                edge.first = e.at("views").at(0).get<int>();
                edge.second = e.at("views").at(1).get<int>();
                edge.first_map = read_point_map(dir / e.at("maps").at(0).get<std::string>());
                edge.second_map = read_point_map(dir / e.at("maps").at(1).get<std::string>());
                b.graph.edges.push_back(std::move(edge));
            }
            if (g.contains("view_maps")) {
                for (const Json& p : g.at("view_maps")) b.graph.view_maps.push_back(read_point_map(dir / p.get<std::string>()));
                require(b.graph.view_maps.size() == train.size(), ErrorCode::Data,
                        "graph.json: one own-frame map per vertex expected");
            }
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::Data, std::string("graph.json: ") + e.what());
        }
    }
    if (fs::exists(dir / "gt_cloud.ply")) b.ground_truth = read_ply(dir / "gt_cloud.ply");
    b.validate();
    return b;
}

}  // namespace sgs
