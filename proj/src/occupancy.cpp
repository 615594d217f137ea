#include "roadsynth/occupancy.hpp"

#include "roadsynth/binary_io.hpp"
#include "roadsynth/error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

namespace roadsynth {

OccupancyGrid::OccupancyGrid(const Vec3& lo, double voxel_size, const std::array<std::uint32_t, 3>& dims)
    : OccupancyGrid(lo, VoxelIndex{0, 0, 0}, voxel_size, dims) {}

OccupancyGrid::OccupancyGrid(const Vec3& anchor, const VoxelIndex& offset, double voxel_size,
                             const std::array<std::uint32_t, 3>& dims)
    : anchor_(anchor), offset_(offset), voxel_(voxel_size), dims_(dims) {
    if (!(voxel_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel_size must be positive");
    bits_.assign((voxel_count() + 63) / 64, 0);
}

Vec3 OccupancyGrid::lo() const {
    return anchor_ + voxel_ * Vec3(static_cast<double>(offset_[0]), static_cast<double>(offset_[1]),
                                   static_cast<double>(offset_[2]));
}

Vec3 OccupancyGrid::hi() const {
    return anchor_ + voxel_ * Vec3(static_cast<double>(offset_[0] + dims_[0]), static_cast<double>(offset_[1] + dims_[1]),
                                   static_cast<double>(offset_[2] + dims_[2]));
}

std::optional<VoxelIndex> OccupancyGrid::voxel_of(const Vec3& p) const {
    VoxelIndex idx{};
    for (int a = 0; a < 3; ++a) {
        const double u = std::floor((p[a] - anchor_[a]) / voxel_) - static_cast<double>(offset_[a]);
        if (!(u >= 0.0) || u >= static_cast<double>(dims_[a])) return std::nullopt;
        idx[a] = static_cast<std::int64_t>(u);
    }
    return idx;
}

bool OccupancyGrid::is_observed(const Vec3& p) const {
    const auto v = voxel_of(p);
    return v && occupied(v->at(0), v->at(1), v->at(2));
}

std::size_t OccupancyGrid::count_occupied() const {
    std::size_t n = 0;
    for (std::uint64_t w : bits_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

std::vector<VoxelIndex> OccupancyGrid::occupied_voxels() const {
    std::vector<VoxelIndex> out;
    for (std::uint32_t k = 0; k < dims_[2]; ++k)
        for (std::uint32_t j = 0; j < dims_[1]; ++j)
            for (std::uint32_t i = 0; i < dims_[0]; ++i)
                if (occupied(i, j, k)) out.push_back({i, j, k});
    return out;
}

OccupancyGrid build_occupancy(std::span<const Vec3> points, double voxel_size) {
    if (points.empty()) throw Error(ErrorCode::EmptyCloud, "cannot build occupancy from an empty cloud");
    if (!(voxel_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel_size must be positive");
    const Aabb box = Aabb::of_points(points);
    const Vec3 lo = box.lo - Vec3::Constant(voxel_size);
    std::array<std::uint32_t, 3> dims{};
    for (int a = 0; a < 3; ++a) {
        // Last point voxel index plus one padding voxel beyond it.
        const auto last = static_cast<std::uint32_t>(std::floor((box.hi[a] - lo[a]) / voxel_size));
        dims[a] = last + 2;
    }
    OccupancyGrid grid(lo, voxel_size, dims);
    for (const Vec3& p : points) {
        const auto v = grid.voxel_of(p);
        if (v) grid.set(v->at(0), v->at(1), v->at(2));
    }
    return grid;
}

namespace {

OccupancyGrid grown_copy(const OccupancyGrid& grid, int radius) {
    const auto& d = grid.dims();
    const std::array<std::uint32_t, 3> dims{d[0] + 2u * radius, d[1] + 2u * radius, d[2] + 2u * radius};
    const VoxelIndex& o = grid.offset();
    OccupancyGrid out(grid.anchor(), VoxelIndex{o[0] - radius, o[1] - radius, o[2] - radius}, grid.voxel_size(), dims);
    for (std::uint32_t k = 0; k < d[2]; ++k)
        for (std::uint32_t j = 0; j < d[1]; ++j)
            for (std::uint32_t i = 0; i < d[0]; ++i)
                if (grid.occupied(i, j, k)) out.set(i + radius, j + radius, k + radius);
    return out;
}

/// One 1-D max filter pass along `axis`. Lines are independent; each thread
/// writes whole lines, and bit words may be shared between lines, so the
/// output of a pass is built into a byte buffer first.
OccupancyGrid dilate_axis(const OccupancyGrid& in, int axis, int radius) {
    const auto& d = in.dims();
    const std::size_t len = d[axis];
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    const std::ptrdiff_t lines = static_cast<std::ptrdiff_t>(d[a1]) * d[a2];
    std::vector<std::uint8_t> bytes(in.voxel_count(), 0);
    auto lin = [&](std::array<std::size_t, 3> idx) { return idx[0] + d[0] * (idx[1] + std::size_t{d[1]} * idx[2]); };

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t line = 0; line < lines; ++line) {
        std::array<std::size_t, 3> idx{};
        idx[a1] = static_cast<std::size_t>(line) % d[a1];
        idx[a2] = static_cast<std::size_t>(line) / d[a1];
        // Distance (in voxels) since the last occupied voxel, swept both ways.
        std::ptrdiff_t last = -(static_cast<std::ptrdiff_t>(radius) + 1) - 1;
        for (std::size_t x = 0; x < len; ++x) {
            idx[axis] = x;
            if (in.occupied(idx[0], idx[1], idx[2])) last = static_cast<std::ptrdiff_t>(x);
            if (static_cast<std::ptrdiff_t>(x) - last <= radius) bytes[lin(idx)] = 1;
        }
        std::ptrdiff_t next = static_cast<std::ptrdiff_t>(len) + radius + 1;
        for (std::size_t x = len; x-- > 0;) {
            idx[axis] = x;
            if (in.occupied(idx[0], idx[1], idx[2])) next = static_cast<std::ptrdiff_t>(x);
            if (next - static_cast<std::ptrdiff_t>(x) <= radius) bytes[lin(idx)] = 1;
        }
    }
    OccupancyGrid out(in.anchor(), in.offset(), in.voxel_size(), d);
    for (std::uint32_t k = 0; k < d[2]; ++k)
        for (std::uint32_t j = 0; j < d[1]; ++j)
            for (std::uint32_t i = 0; i < d[0]; ++i)
                if (bytes[lin({i, j, k})]) out.set(i, j, k);
    return out;
}

} // namespace

OccupancyGrid dilate(const OccupancyGrid& grid, int radius) {
    if (radius < 0) throw Error(ErrorCode::InvalidArgument, "dilation radius must be >= 0");
    if (radius == 0) return grid;
    OccupancyGrid out = grown_copy(grid, radius);
    for (int axis = 0; axis < 3; ++axis) out = dilate_axis(out, axis, radius);
    return out;
}

OccupancyGrid dilate_reference(const OccupancyGrid& grid, int radius) {
    if (radius < 0) throw Error(ErrorCode::InvalidArgument, "dilation radius must be >= 0");
    if (radius == 0) return grid;
    const OccupancyGrid src = grown_copy(grid, radius);
    OccupancyGrid out(src.anchor(), src.offset(), src.voxel_size(), src.dims());
    const auto& d = src.dims();
    const auto r = static_cast<std::int64_t>(radius);
    for (std::int64_t k = 0; k < d[2]; ++k)
        for (std::int64_t j = 0; j < d[1]; ++j)
            for (std::int64_t i = 0; i < d[0]; ++i) {
                bool any = false;
                for (std::int64_t dk = -r; dk <= r && !any; ++dk)
                    for (std::int64_t dj = -r; dj <= r && !any; ++dj)
                        for (std::int64_t di = -r; di <= r && !any; ++di) {
                            const std::int64_t x = i + di, y = j + dj, z = k + dk;
                            if (x < 0 || y < 0 || z < 0 || x >= d[0] || y >= d[1] || z >= d[2]) continue;
                            any = src.occupied(x, y, z);
                        }
                if (any) out.set(i, j, k);
            }
    return out;
}

ConstrainedSample constrain_background_sample(const OccupancyGrid& grid, const Vec3& p, double sdf,
                                              double drop_probability) {
    if (grid.is_observed(p)) return {sdf, drop_probability, true};
    return {std::numeric_limits<double>::infinity(), 1.0, false};
}

namespace {
constexpr char kOccMagic[5] = "ROCC";
constexpr std::uint32_t kOccVersion = 2;
} // namespace

void write_occupancy(std::ostream& out, const OccupancyGrid& grid) {
    using namespace binio;
    put_magic(out, kOccMagic);
    put_u32(out, kOccVersion);
    for (int a = 0; a < 3; ++a) put_f64(out, grid.anchor()[a]);
    for (int a = 0; a < 3; ++a) put_u64(out, static_cast<std::uint64_t>(grid.offset()[a]));
    put_f64(out, grid.voxel_size());
    for (auto d : grid.dims()) put_u32(out, d);
    put_u64(out, grid.words().size());
    for (std::uint64_t w : grid.words()) put_u64(out, w);
}

OccupancyGrid read_occupancy(std::istream& in) {
    using namespace binio;
    expect_magic(in, kOccMagic);
    const auto version = get_u32(in, "occupancy version");
    if (version != kOccVersion) throw Error(ErrorCode::FormatError, "unsupported occupancy version");
    Vec3 anchor;
    for (int a = 0; a < 3; ++a) anchor[a] = get_f64(in, "anchor");
    VoxelIndex offset{};
    for (int a = 0; a < 3; ++a) offset[a] = static_cast<std::int64_t>(get_u64(in, "offset"));
    const double voxel = get_f64(in, "voxel size");
    std::array<std::uint32_t, 3> dims{};
    for (auto& d : dims) d = get_u32(in, "dims");
    OccupancyGrid grid(anchor, offset, voxel, dims);
    const auto words = get_u64(in, "word count");
    if (words != grid.bits_.size()) throw Error(ErrorCode::FormatError, "occupancy word count mismatch");
    for (auto& w : grid.bits_) w = get_u64(in, "occupancy words");
    return grid;
}

void save_occupancy(const std::filesystem::path& path, const OccupancyGrid& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot open " + path.string() + " for writing");
    write_occupancy(out, grid);
}

OccupancyGrid load_occupancy(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, path.string());
    return read_occupancy(in);
}

} // namespace roadsynth
