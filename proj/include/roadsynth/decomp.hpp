#pragma once

#include "roadsynth/geom.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace roadsynth {

using TrackId = std::int64_t;

struct TrackedBox {
    TrackId track_id = 0;
    std::string type = "car";
    OrientedBox box; ///< world frame
    bool operator==(const TrackedBox&) const = default;
};

/// One LiDAR sweep with its annotations.
struct Frame {
    std::int64_t frame_id = 0;
    double timestamp = 0.0;
    RigidTransform sensor_pose; ///< sensor -> world
    std::vector<Vec3> points;   ///< sensor frame
    std::vector<TrackedBox> boxes;

    Vec3 world_point(std::size_t i) const { return sensor_pose.apply(points[i]); }
};

/// A contiguous capture sequence.
struct Fragment {
    std::string name;
    std::vector<Frame> frames;
    /// Boxes for unannotated movers (e.g. detector output), world frame, per frame id.
    std::map<std::int64_t, std::vector<OrientedBox>> pseudo_boxes;
};

struct TrackFrame {
    std::int64_t frame_id = 0;
    OrientedBox box;               ///< B_t, world frame
    RigidTransform to_canonical;   ///< T_t with B_1 = T_t B_t
    std::vector<Vec3> points;      ///< X_t in canonical box-local coordinates
};

struct TrackedVehicle {
    TrackId track_id = 0;
    std::vector<TrackFrame> frames; ///< in time order; frames[0] holds the canonical box
    bool reconstructable = true;

    const OrientedBox& canonical_box() const { return frames.front().box; }
    /// The canonical box expressed in its own local frame (centered, zero yaw).
    OrientedBox local_box() const { return {Vec3::Zero(), canonical_box().size, 0.0}; }
};

struct BackgroundCloud {
    std::vector<Vec3> points; ///< world frame
    std::vector<std::string> sources;
};

struct ExtractionOptions {
    double box_margin = 0.1;
};

struct Extraction {
    std::map<TrackId, std::vector<Vec3>> vehicle_points; ///< canonical box-local coordinates
    std::vector<Vec3> background;                        ///< world frame
    std::vector<std::size_t> background_indices;         ///< indices into frame.points
};

/// Maps a track's world-frame box at some frame to canonical box-local coordinates:
/// canonical_local = B_1^{-1} ∘ T_t.
RigidTransform canonical_local_transform(const OrientedBox& canonical, const OrientedBox& observed);

/// Assigns every point to the first containing (inflated) box in track-id order,
/// else to the background. `canonical_boxes` provides B_1 per track.
Extraction extract_vehicle_points(const Frame& frame, const std::map<TrackId, OrientedBox>& canonical_boxes,
                                  const ExtractionOptions& opt = {});

/// Groups per-frame extractions into tracks ordered by frame time.
std::map<TrackId, TrackedVehicle> build_tracks(std::span<const Frame> frames, const ExtractionOptions& opt = {});

/// Keeps the vehicle iff its best frame has at least min_points points; stores
/// the verdict in vehicle.reconstructable.
bool filter_unreconstructable(TrackedVehicle& vehicle, std::size_t min_points);

/// Index of the frame with the most points (earliest on ties).
/// Throws Error(EmptyTrack) for a track without frames.
std::size_t select_best_frame(const TrackedVehicle& vehicle);

/// Adds the reflection of every point across the box's longitudinal vertical
/// plane; reflections within dedup_tolerance of an existing point are skipped.
std::vector<Vec3> mirror_augment(std::span<const Vec3> points, const OrientedBox& box,
                                 double dedup_tolerance = 1e-3);

/// Drops points whose height above the box bottom face is below band.
std::vector<Vec3> filter_ground_points(std::span<const Vec3> points, const OrientedBox& box, double band = 0.15);

/// Removes every point inside any pseudo box grown by margin.
BackgroundCloud remove_dynamic_background(const BackgroundCloud& background, std::span<const OrientedBox> pseudo_boxes,
                                          double margin = 0.1);

struct AlignmentOptions {
    double voxel = 0.2;
    int max_iterations = 50;
    double max_correspondence = 1.0;
    std::size_t min_correspondences = 30;
    double convergence = 1e-7;
};

/// Pairwise point-to-point ICP of every fragment cloud (voxel-downsampled)
/// against the full cloud of the first one (gauge). Returns the world-frame correction per fragment. Throws
/// Error(NoOverlap) when a fragment has too few correspondences.
std::vector<RigidTransform> align_fragments(std::span<const BackgroundCloud> fragments,
                                            const AlignmentOptions& opt = {});

/// Voxel-grid downsampling keeping the centroid per voxel, output sorted by voxel key.
std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double voxel);

} // namespace roadsynth
