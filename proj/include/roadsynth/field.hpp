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

/// Node lattice of a grid field: nodes sit at lo + i * spacing, i in [0, dims).
struct GridLattice {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Ones();
    std::array<std::uint32_t, 3> dims{2, 2, 2};

    Vec3 spacing() const;
    std::size_t node_count() const { return std::size_t{dims[0]} * dims[1] * dims[2]; }
    std::size_t index(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        return i + std::size_t{dims[0]} * (j + std::size_t{dims[1]} * k);
    }
    Vec3 node(std::uint32_t i, std::uint32_t j, std::uint32_t k) const;
    Aabb bounds() const { return {lo, hi}; }

    /// Cubic lattice covering `box` with the given node spacing; hi is moved
    /// outward so the spacing is exact.
    static GridLattice covering(const Aabb& box, double voxel);
};

/// The 8 nodes of the cell containing a point and their trilinear weights.
struct CellStencil {
    std::array<std::size_t, 8> nodes{};
    std::array<double, 8> weights{};
    /// d(weight)/d(p) per node; zero along axes where the point was clamped.
    std::array<Vec3, 8> weight_gradients{};
};

/// Trilinear grid of signed distances and ray-drop logits.
///
/// Queries outside the lattice clamp to the border node values.
class SdfGridField {
public:
    SdfGridField() = default;
    SdfGridField(const GridLattice& lattice, double truncation);

    const GridLattice& lattice() const { return lattice_; }
    double truncation() const { return truncation_; }
    double voxel_size() const { return lattice_.spacing().minCoeff(); }

    std::span<double> sdf() { return sdf_; }
    std::span<const double> sdf() const { return sdf_; }
    std::span<double> drop_logits() { return drop_; }
    std::span<const double> drop_logits() const { return drop_; }

    CellStencil stencil(const Vec3& p) const;

    double query_sdf(const Vec3& p) const;
    Vec3 query_sdf_gradient(const Vec3& p) const;
    double query_drop_logit(const Vec3& p) const;
    double query_drop(const Vec3& p) const;

    /// Clamps every SDF node to [-truncation, truncation].
    void clamp_sdf();
    /// Rounds all parameters to 32-bit float precision (the on-disk precision).
    void snap_to_float();

    /// Fills SDF nodes from a callable, clamped to the truncation band.
    template <typename F>
    void fill_sdf(F&& f) {
        for (std::uint32_t k = 0; k < lattice_.dims[2]; ++k)
            for (std::uint32_t j = 0; j < lattice_.dims[1]; ++j)
                for (std::uint32_t i = 0; i < lattice_.dims[0]; ++i)
                    sdf_[lattice_.index(i, j, k)] = f(lattice_.node(i, j, k));
        clamp_sdf();
    }

    bool operator==(const SdfGridField& other) const = default;

private:
    GridLattice lattice_;
    double truncation_ = 1.0;
    std::vector<double> sdf_;
    std::vector<double> drop_;
};

inline bool operator==(const GridLattice& a, const GridLattice& b) {
    return a.lo == b.lo && a.hi == b.hi && a.dims == b.dims;
}

double sigmoid(double x);

/// Binary field file: "RSDF" magic, u32 version, 6 f64 bounds (lo xyz, hi xyz),
/// 3 u32 resolution, f64 truncation, then node SDF values and drop logits as f32,
/// x fastest. All little-endian.
void write_field(std::ostream& out, const SdfGridField& field);
SdfGridField read_field(std::istream& in);
void save_field(const std::filesystem::path& path, const SdfGridField& field);
SdfGridField load_field(const std::filesystem::path& path);

} // namespace roadsynth
