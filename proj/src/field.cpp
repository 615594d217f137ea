#include "roadsynth/field.hpp"

#include "roadsynth/binary_io.hpp"
#include "roadsynth/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace roadsynth {

Vec3 GridLattice::spacing() const {
    return {(hi.x() - lo.x()) / (dims[0] - 1), (hi.y() - lo.y()) / (dims[1] - 1),
            (hi.z() - lo.z()) / (dims[2] - 1)};
}

Vec3 GridLattice::node(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
    const Vec3 h = spacing();
    return {lo.x() + i * h.x(), lo.y() + j * h.y(), lo.z() + k * h.z()};
}

GridLattice GridLattice::covering(const Aabb& box, double voxel) {
    if (!(voxel > 0.0)) throw Error(ErrorCode::InvalidArgument, "voxel size must be positive");
    GridLattice g;
    g.lo = box.lo;
    for (int a = 0; a < 3; ++a) {
        const double extent = std::max(0.0, box.hi[a] - box.lo[a]);
        const auto cells = static_cast<std::uint32_t>(std::max(1.0, std::ceil(extent / voxel - 1e-9)));
        g.dims[a] = cells + 1;
        g.hi[a] = box.lo[a] + cells * voxel;
    }
    return g;
}

SdfGridField::SdfGridField(const GridLattice& lattice, double truncation)
    : lattice_(lattice), truncation_(truncation) {
    for (auto d : lattice.dims) {
        if (d < 2) throw Error(ErrorCode::InvalidArgument, "grid resolution must be >= 2 per axis");
    }
    if (!(truncation > 0.0)) throw Error(ErrorCode::InvalidArgument, "truncation must be positive");
    sdf_.assign(lattice.node_count(), truncation);
    drop_.assign(lattice.node_count(), 0.0);
}

CellStencil SdfGridField::stencil(const Vec3& p) const {
    const Vec3 h = lattice_.spacing();
    std::array<std::uint32_t, 3> base{};
    std::array<double, 3> frac{};
    std::array<double, 3> dfrac{};
    for (int a = 0; a < 3; ++a) {
        const double n1 = lattice_.dims[a] - 1;
        double u = (p[a] - lattice_.lo[a]) / h[a];
        dfrac[a] = 1.0 / h[a];
        if (u < 0.0) {
            u = 0.0;
            dfrac[a] = 0.0;
        } else if (u > n1) {
            u = n1;
            dfrac[a] = 0.0;
        }
        const auto i0 = static_cast<std::uint32_t>(std::min(std::floor(u), n1 - 1.0));
        base[a] = i0;
        frac[a] = u - i0;
    }
    CellStencil st;
    for (int c = 0; c < 8; ++c) {
        const int bx = c & 1, by = (c >> 1) & 1, bz = (c >> 2) & 1;
        const double wx = bx ? frac[0] : 1.0 - frac[0];
        const double wy = by ? frac[1] : 1.0 - frac[1];
        const double wz = bz ? frac[2] : 1.0 - frac[2];
        const double sx = bx ? dfrac[0] : -dfrac[0];
        const double sy = by ? dfrac[1] : -dfrac[1];
        const double sz = bz ? dfrac[2] : -dfrac[2];
        st.nodes[c] = lattice_.index(base[0] + bx, base[1] + by, base[2] + bz);
        st.weights[c] = wx * wy * wz;
        st.weight_gradients[c] = Vec3(sx * wy * wz, wx * sy * wz, wx * wy * sz);
    }
    return st;
}

double SdfGridField::query_sdf(const Vec3& p) const {
    const CellStencil st = stencil(p);
    double s = 0.0;
    for (int c = 0; c < 8; ++c) s += st.weights[c] * sdf_[st.nodes[c]];
    return s;
}

Vec3 SdfGridField::query_sdf_gradient(const Vec3& p) const {
    const CellStencil st = stencil(p);
    Vec3 g = Vec3::Zero();
    for (int c = 0; c < 8; ++c) g += sdf_[st.nodes[c]] * st.weight_gradients[c];
    return g;
}

double SdfGridField::query_drop_logit(const Vec3& p) const {
    const CellStencil st = stencil(p);
    double z = 0.0;
    for (int c = 0; c < 8; ++c) z += st.weights[c] * drop_[st.nodes[c]];
    return z;
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double SdfGridField::query_drop(const Vec3& p) const { return sigmoid(query_drop_logit(p)); }

void SdfGridField::clamp_sdf() {
    for (double& v : sdf_) v = std::clamp(v, -truncation_, truncation_);
}

void SdfGridField::snap_to_float() {
    for (double& v : sdf_) v = round_to_float(v);
    for (double& v : drop_) v = round_to_float(v);
}

namespace {
constexpr char kFieldMagic[5] = "RSDF";
constexpr std::uint32_t kFieldVersion = 1;
} // namespace

void write_field(std::ostream& out, const SdfGridField& field) {
    using namespace binio;
    const GridLattice& g = field.lattice();
    put_magic(out, kFieldMagic);
    put_u32(out, kFieldVersion);
    for (int a = 0; a < 3; ++a) put_f64(out, g.lo[a]);
    for (int a = 0; a < 3; ++a) put_f64(out, g.hi[a]);
    for (auto d : g.dims) put_u32(out, d);
    put_f64(out, field.truncation());
    for (double v : field.sdf()) put_f32(out, static_cast<float>(v));
    for (double v : field.drop_logits()) put_f32(out, static_cast<float>(v));
}

SdfGridField read_field(std::istream& in) {
    using namespace binio;
    expect_magic(in, kFieldMagic);
    const std::uint32_t version = get_u32(in, "field version");
    if (version != kFieldVersion) {
        throw Error(ErrorCode::FormatError, "unsupported field version " + std::to_string(version));
    }
    GridLattice g;
    for (int a = 0; a < 3; ++a) g.lo[a] = get_f64(in, "bounds");
    for (int a = 0; a < 3; ++a) g.hi[a] = get_f64(in, "bounds");
    for (auto& d : g.dims) d = get_u32(in, "resolution");
    const double truncation = get_f64(in, "truncation");
    SdfGridField field(g, truncation);
    for (double& v : field.sdf()) v = get_f32(in, "sdf values");
    for (double& v : field.drop_logits()) v = get_f32(in, "drop logits");
    return field;
}

void save_field(const std::filesystem::path& path, const SdfGridField& field) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::MissingFile, "cannot open " + path.string() + " for writing");
    write_field(out, field);
}

SdfGridField load_field(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, path.string());
    try {
        return read_field(in);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::FormatError) throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
        throw;
    }
}

} // namespace roadsynth
