#pragma once

#include "roadsynth/geom.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace roadsynth {

using VoxelIndex = std::array<std::int64_t, 3>;

/// Bit-packed binary voxel map on a lattice anchored at `anchor`. The grid's
/// first voxel sits `offset` lattice steps from the anchor, and voxel (i, j, k)
/// covers [anchor + (offset + idx) * voxel, anchor + (offset + idx + 1) * voxel)
/// on every axis. Growing a grid only changes the integer offset, so grids
/// grown in different steps compare equal.
class OccupancyGrid {
public:
    OccupancyGrid() = default;
    OccupancyGrid(const Vec3& lo, double voxel_size, const std::array<std::uint32_t, 3>& dims);
    OccupancyGrid(const Vec3& anchor, const VoxelIndex& offset, double voxel_size,
                  const std::array<std::uint32_t, 3>& dims);

    Vec3 lo() const;
    const Vec3& anchor() const { return anchor_; }
    const VoxelIndex& offset() const { return offset_; }
    Vec3 hi() const;
    double voxel_size() const { return voxel_; }
    const std::array<std::uint32_t, 3>& dims() const { return dims_; }
    std::size_t voxel_count() const { return std::size_t{dims_[0]} * dims_[1] * dims_[2]; }

    /// Voxel containing p, or nullopt when p lies outside the grid.
    std::optional<VoxelIndex> voxel_of(const Vec3& p) const;

    bool occupied(std::size_t i, std::size_t j, std::size_t k) const {
        return get(linear(i, j, k));
    }
    void set(std::size_t i, std::size_t j, std::size_t k, bool value = true) { put(linear(i, j, k), value); }

    /// True iff p is inside the grid and its voxel is occupied.
    bool is_observed(const Vec3& p) const;

    std::size_t count_occupied() const;
    std::vector<VoxelIndex> occupied_voxels() const;

    std::span<const std::uint64_t> words() const { return bits_; }

    bool operator==(const OccupancyGrid& other) const = default;

private:
    friend OccupancyGrid read_occupancy(std::istream& in);
    std::size_t linear(std::size_t i, std::size_t j, std::size_t k) const {
        return i + dims_[0] * (j + std::size_t{dims_[1]} * k);
    }
    bool get(std::size_t bit) const { return (bits_[bit >> 6] >> (bit & 63)) & 1u; }
    void put(std::size_t bit, bool value) {
        const std::uint64_t mask = std::uint64_t{1} << (bit & 63);
        if (value) bits_[bit >> 6] |= mask; else bits_[bit >> 6] &= ~mask;
    }

    Vec3 anchor_ = Vec3::Zero();
    VoxelIndex offset_{0, 0, 0};
    double voxel_ = 1.0;
    std::array<std::uint32_t, 3> dims_{0, 0, 0};
    std::vector<std::uint64_t> bits_;
};

/// Voxelizes a cloud: bounds are the tight cloud bounds padded by one voxel.
/// Throws Error(EmptyCloud) for an empty cloud.
OccupancyGrid build_occupancy(std::span<const Vec3> points, double voxel_size);

/// Cube (Chebyshev) dilation. The output grid is grown by `radius` voxels on
/// every side so no occupied voxel is clipped. Separable per-axis passes,
/// parallelized over grid lines.
OccupancyGrid dilate(const OccupancyGrid& grid, int radius);

/// Direct neighborhood scan; serial reference for dilate().
OccupancyGrid dilate_reference(const OccupancyGrid& grid, int radius);

/// Result of evaluating a background field sample under the visibility constraint.
struct ConstrainedSample {
    double sdf;
    double drop_probability;
    bool surface_allowed; ///< false when the sample lies in unobserved space
};

/// Observed samples pass through unchanged; unobserved ones become a forced
/// drop (p_d = 1) that cannot host a surface.
ConstrainedSample constrain_background_sample(const OccupancyGrid& grid, const Vec3& p, double sdf,
                                              double drop_probability);

/// Layout: "ROCC" magic, u32 version, 3 f64 lo, f64 voxel size, 3 u32 dims,
/// u64 word count, then the bit words as little-endian u64 (bit b of the voxel
/// stream is bit b % 64 of word b / 64; voxels in x-fastest order).
void write_occupancy(std::ostream& out, const OccupancyGrid& grid);
OccupancyGrid read_occupancy(std::istream& in);
void save_occupancy(const std::filesystem::path& path, const OccupancyGrid& grid);
OccupancyGrid load_occupancy(const std::filesystem::path& path);

} // namespace roadsynth
