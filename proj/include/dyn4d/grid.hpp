#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dyn4d/errors.hpp"

namespace dyn4d {

/// Dense row-major H x W x C buffer. Row 0 is the top image row.
template <class T>
class Grid {
public:
    Grid() = default;
    Grid(int width, int height, int channels, T fill = T{})
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<std::size_t>(width) * height * channels, fill) {
        if (width < 0 || height < 0 || channels < 0) {
            throw ContractError("grid dimensions must be non-negative");
        }
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    bool empty() const { return data_.empty(); }
    std::size_t size() const { return data_.size(); }

    T &operator()(int row, int col, int ch = 0) { return data_[index(row, col, ch)]; }
    const T &operator()(int row, int col, int ch = 0) const { return data_[index(row, col, ch)]; }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }

    bool same_shape(const Grid &other) const {
        return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
    }

    std::string shape_string() const {
        return std::to_string(height_) + "x" + std::to_string(width_) + "x" + std::to_string(channels_);
    }

    bool operator==(const Grid &) const = default;

private:
    std::size_t index(int row, int col, int ch) const {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<T> data_;
};

using Map = Grid<double>;
using FloatMap = Grid<float>;
using Mask = Grid<std::uint8_t>;

template <class U, class T>
Grid<U> grid_cast(const Grid<T> &in) {
    Grid<U> out(in.width(), in.height(), in.channels());
    auto src = in.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = static_cast<U>(src[i]);
    }
    return out;
}

inline void require_same_shape(const Map &a, const Map &b, const char *what) {
    if (!a.same_shape(b)) {
        throw ContractError(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                            b.shape_string());
    }
}

} // namespace dyn4d
