#include "roadsynth/decomp.hpp"

#include "roadsynth/error.hpp"
#include "roadsynth/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace roadsynth {

RigidTransform canonical_local_transform(const OrientedBox& canonical, const OrientedBox& observed) {
    return compose(canonical.pose().inverse(), estimate_box_transform(canonical, observed));
}

Extraction extract_vehicle_points(const Frame& frame, const std::map<TrackId, OrientedBox>& canonical_boxes,
                                  const ExtractionOptions& opt) {
    std::vector<const TrackedBox*> order;
    order.reserve(frame.boxes.size());
    for (const auto& b : frame.boxes) order.push_back(&b);
    std::stable_sort(order.begin(), order.end(),
                     [](const TrackedBox* a, const TrackedBox* b) { return a->track_id < b->track_id; });

    std::vector<RigidTransform> to_local(order.size());
    for (std::size_t b = 0; b < order.size(); ++b) {
        const auto it = canonical_boxes.find(order[b]->track_id);
        const OrientedBox& canonical = it != canonical_boxes.end() ? it->second : order[b]->box;
        to_local[b] = canonical_local_transform(canonical, order[b]->box);
    }

    Extraction out;
    for (std::size_t i = 0; i < frame.points.size(); ++i) {
        const Vec3 w = frame.world_point(i);
        bool assigned = false;
        for (std::size_t b = 0; b < order.size(); ++b) {
            if (order[b]->box.contains(w, opt.box_margin)) {
                out.vehicle_points[order[b]->track_id].push_back(to_local[b].apply(w));
                assigned = true;
                break;
            }
        }
        if (!assigned) {
            out.background.push_back(w);
            out.background_indices.push_back(i);
        }
    }
    return out;
}

std::map<TrackId, TrackedVehicle> build_tracks(std::span<const Frame> frames, const ExtractionOptions& opt) {
    std::vector<const Frame*> ordered;
    for (const auto& f : frames) ordered.push_back(&f);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const Frame* a, const Frame* b) { return a->timestamp < b->timestamp; });

    std::map<TrackId, OrientedBox> canonical;
    for (const Frame* f : ordered)
        for (const auto& b : f->boxes) canonical.try_emplace(b.track_id, b.box);

    std::map<TrackId, TrackedVehicle> tracks;
    for (const Frame* f : ordered) {
        Extraction ex = extract_vehicle_points(*f, canonical, opt);
        for (const auto& b : f->boxes) {
            TrackedVehicle& v = tracks[b.track_id];
            v.track_id = b.track_id;
            TrackFrame tf;
            tf.frame_id = f->frame_id;
            tf.box = b.box;
            tf.to_canonical = estimate_box_transform(canonical.at(b.track_id), b.box);
            auto it = ex.vehicle_points.find(b.track_id);
            if (it != ex.vehicle_points.end()) tf.points = std::move(it->second);
            v.frames.push_back(std::move(tf));
        }
    }
    return tracks;
}

bool filter_unreconstructable(TrackedVehicle& vehicle, std::size_t min_points) {
    std::size_t best = 0;
    for (const auto& f : vehicle.frames) best = std::max(best, f.points.size());
    vehicle.reconstructable = !vehicle.frames.empty() && best >= min_points;
    return vehicle.reconstructable;
}

std::size_t select_best_frame(const TrackedVehicle& vehicle) {
    if (vehicle.frames.empty()) throw Error(ErrorCode::EmptyTrack, "track " + std::to_string(vehicle.track_id));
    std::size_t best = 0;
    for (std::size_t i = 1; i < vehicle.frames.size(); ++i) {
        if (vehicle.frames[i].points.size() > vehicle.frames[best].points.size()) best = i;
    }
    return best;
}

namespace {

struct CellKey {
    std::int64_t x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const {
        std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ull;
        h ^= static_cast<std::uint64_t>(k.y) * 19349663ull;
        h ^= static_cast<std::uint64_t>(k.z) * 83492791ull;
        return static_cast<std::size_t>(h);
    }
};

CellKey cell_of(const Vec3& p, double size) {
    return {static_cast<std::int64_t>(std::floor(p.x() / size)), static_cast<std::int64_t>(std::floor(p.y() / size)),
            static_cast<std::int64_t>(std::floor(p.z() / size))};
}

} // namespace

std::vector<Vec3> mirror_augment(std::span<const Vec3> points, const OrientedBox& box, double dedup_tolerance) {
    std::vector<Vec3> out(points.begin(), points.end());
    const double cell = std::max(dedup_tolerance, 1e-9);
    std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> grid;
    for (std::size_t i = 0; i < out.size(); ++i) grid[cell_of(out[i], cell)].push_back(i);

    const RigidTransform pose = box.pose();
    const RigidTransform inv = pose.inverse();
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 local = inv.apply(out[i]);
        local.y() = -local.y();
        const Vec3 mirrored = pose.apply(local);
        const CellKey c = cell_of(mirrored, cell);
        bool duplicate = false;
        for (std::int64_t dz = -1; dz <= 1 && !duplicate; ++dz)
            for (std::int64_t dy = -1; dy <= 1 && !duplicate; ++dy)
                for (std::int64_t dx = -1; dx <= 1 && !duplicate; ++dx) {
                    auto it = grid.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == grid.end()) continue;
                    for (std::size_t j : it->second) {
                        if ((out[j] - mirrored).norm() <= dedup_tolerance) {
                            duplicate = true;
                            break;
                        }
                    }
                }
        if (duplicate) continue;
        grid[c].push_back(out.size());
        out.push_back(mirrored);
    }
    return out;
}

std::vector<Vec3> filter_ground_points(std::span<const Vec3> points, const OrientedBox& box, double band) {
    if (band < 0.0) throw Error(ErrorCode::InvalidArgument, "ground band must be >= 0");
    std::vector<Vec3> out;
    out.reserve(points.size());
    const double bottom = -0.5 * box.size.z();
    for (const Vec3& p : points) {
        if (box.to_local(p).z() - bottom >= band) out.push_back(p);
    }
    return out;
}

BackgroundCloud remove_dynamic_background(const BackgroundCloud& background, std::span<const OrientedBox> pseudo_boxes,
                                          double margin) {
    BackgroundCloud out;
    out.sources = background.sources;
    out.points.reserve(background.points.size());
    for (const Vec3& p : background.points) {
        const bool inside = std::any_of(pseudo_boxes.begin(), pseudo_boxes.end(),
                                        [&](const OrientedBox& b) { return b.contains(p, margin); });
        if (!inside) out.points.push_back(p);
    }
    return out;
}

std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double voxel) {
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, std::pair<Vec3, std::size_t>> cells;
    for (const Vec3& p : points) {
        const CellKey k = cell_of(p, voxel);
        auto& acc = cells[{k.x, k.y, k.z}];
        if (acc.second == 0) acc.first = Vec3::Zero();
        acc.first += p;
        ++acc.second;
    }
    std::vector<Vec3> out;
    out.reserve(cells.size());
    for (const auto& [key, acc] : cells) out.push_back(acc.first / static_cast<double>(acc.second));
    return out;
}

namespace {

/// Per voxel, the input point nearest to the voxel centroid.
std::vector<Vec3> voxel_representatives(std::span<const Vec3> points, double voxel) {
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, std::pair<Vec3, std::size_t>> sums;
    for (const Vec3& p : points) {
        const CellKey k = cell_of(p, voxel);
        auto& acc = sums[{k.x, k.y, k.z}];
        if (acc.second == 0) acc.first = Vec3::Zero();
        acc.first += p;
        ++acc.second;
    }
    std::map<std::tuple<std::int64_t, std::int64_t, std::int64_t>, std::pair<Vec3, double>> best;
    for (const Vec3& p : points) {
        const CellKey k = cell_of(p, voxel);
        const auto key = std::make_tuple(k.x, k.y, k.z);
        const auto& acc = sums.at(key);
        const double d = (p - acc.first / static_cast<double>(acc.second)).squaredNorm();
        auto it = best.find(key);
        if (it == best.end() || d < it->second.second) best[key] = {p, d};
    }
    std::vector<Vec3> out;
    out.reserve(best.size());
    for (const auto& [key, v] : best) out.push_back(v.first);
    return out;
}

} // namespace

std::vector<RigidTransform> align_fragments(std::span<const BackgroundCloud> fragments, const AlignmentOptions& opt) {
    if (fragments.empty()) throw Error(ErrorCode::EmptyInput, "no fragments to align");
    std::vector<RigidTransform> out{RigidTransform::identity()};
    if (fragments.size() == 1) return out;

    const std::vector<Vec3>& target = fragments[0].points;
    if (target.empty()) throw Error(ErrorCode::EmptyCloud, "reference fragment is empty");
    const KdTree tree(target);
    const double gate_sq = opt.max_correspondence * opt.max_correspondence;

    for (std::size_t f = 1; f < fragments.size(); ++f) {
        const std::vector<Vec3> source = voxel_representatives(fragments[f].points, opt.voxel);
        RigidTransform estimate;
        std::size_t matched = 0;
        for (int it = 0; it < opt.max_iterations; ++it) {
            std::vector<Vec3> src, dst;
            for (const Vec3& p : source) {
                const Vec3 q = estimate.apply(p);
                const auto nb = tree.nearest(q);
                if (nb.dist_sq <= gate_sq) {
                    src.push_back(q);
                    dst.push_back(target[nb.index]);
                }
            }
            matched = src.size();
            if (matched < std::max<std::size_t>(opt.min_correspondences, 3)) {
                throw Error(ErrorCode::NoOverlap, "fragment " + std::to_string(f) + " has " + std::to_string(matched) +
                                                      " correspondences within " +
                                                      std::to_string(opt.max_correspondence) + " m");
            }
            Eigen::Matrix3Xd s(3, matched), d(3, matched);
            for (std::size_t i = 0; i < matched; ++i) {
                s.col(static_cast<Eigen::Index>(i)) = src[i];
                d.col(static_cast<Eigen::Index>(i)) = dst[i];
            }
            const RigidTransform delta = kabsch(s, d);
            estimate = compose(delta, estimate);
            if (transform_distance(delta, RigidTransform::identity()) < opt.convergence) break;
        }
        out.push_back(estimate);
    }
    return out;
}

} // namespace roadsynth
