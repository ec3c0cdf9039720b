#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace sgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Row-major H x W raster. Pixel (x, y) has column x and row y.
template <typename T>
struct Grid {
    int width = 0;
    int height = 0;
    std::vector<T> values;

    Grid() = default;
    Grid(int w, int h, const T& fill = T{})
        : width(w), height(h), values(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    T& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }

    T& operator[](std::size_t i) { return values[i]; }
    const T& operator[](std::size_t i) const { return values[i]; }

    template <typename U>
    bool same_shape(const Grid<U>& other) const {
        return width == other.width && height == other.height;
    }
};

// Eigen fixed-size vectors do not zero-initialize; make fills explicit.
using ImageBuffer = Grid<Vec3>;
using DepthMap = Grid<double>;
using Mask = Grid<unsigned char>;

inline ImageBuffer make_image(int w, int h, const Vec3& fill = Vec3::Zero()) { return ImageBuffer(w, h, fill); }

}  // namespace sgs
