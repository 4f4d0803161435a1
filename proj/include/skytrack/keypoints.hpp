#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "skytrack/common.hpp"
#include "skytrack/io.hpp"

namespace skytrack {

inline constexpr int kKeypointCount = 33;
inline constexpr int kDetectableKeypointCount = 19;

// The 33-slot vehicle keypoint schema. Slots come in right-left pairs or
// front-right/front-left/rear-right/rear-left quadruples; 19 slots are
// observable by an image detector, the rest exist only in 3D annotation.
struct KeypointSchema {
    struct Slot {
        int id;
        bool detectable;
        const char* name;
    };

    static const std::array<Slot, kKeypointCount>& slots() {
        static const std::array<Slot, kKeypointCount> table = {{
            {0, true, "roof_front_right"},
            {1, true, "roof_front_left"},
            {2, true, "roof_rear_right"},
            {3, true, "roof_rear_left"},
            {4, true, "windshield_front_right"},
            {5, true, "windshield_front_left"},
            {6, true, "windshield_rear_right"},
            {7, true, "windshield_rear_left"},
            {8, true, "light_front_right"},
            {9, true, "light_front_left"},
            {10, true, "light_rear_right"},
            {11, true, "light_rear_left"},
            {12, false, "bumper_front_right"},
            {13, false, "bumper_front_left"},
            {14, false, "bumper_rear_right"},
            {15, false, "bumper_rear_left"},
            {16, false, "wheel_center_front_right"},
            {17, false, "wheel_center_front_left"},
            {18, false, "wheel_center_rear_right"},
            {19, false, "wheel_center_rear_left"},
            {20, false, "chassis_front_right"},
            {21, false, "chassis_front_left"},
            {22, false, "chassis_rear_right"},
            {23, false, "chassis_rear_left"},
            {24, true, "mirror_right"},
            {25, true, "mirror_left"},
            {26, false, "door_window_front_right"},
            {27, false, "door_window_front_left"},
            {28, true, "wheel_ground_front_right"},
            {29, true, "wheel_ground_front_left"},
            {30, true, "wheel_ground_rear_right"},
            {31, true, "wheel_ground_rear_left"},
            {32, true, "brand_logo_front"},
        }};
        return table;
    }

    static bool detectable(int id) { return slots()[static_cast<std::size_t>(id)].detectable; }

    // (right, left) slot pairs mirrored across the vehicle centerline.
    static const std::vector<std::pair<int, int>>& left_right_pairs() {
        static const std::vector<std::pair<int, int>> pairs = {
            {0, 1},   {2, 3},   {4, 5},   {6, 7},   {8, 9},   {10, 11}, {12, 13}, {14, 15},
            {16, 17}, {18, 19}, {20, 21}, {22, 23}, {24, 25}, {26, 27}, {28, 29}, {30, 31}};
        return pairs;
    }

    // (front, rear) slots of the same quadruple among the detectable groups;
    // front minus rear points in the vehicle's forward direction.
    static const std::vector<std::pair<int, int>>& forward_pairs() {
        static const std::vector<std::pair<int, int>> pairs = {
            {0, 2}, {1, 3}, {4, 6}, {5, 7}, {8, 10}, {9, 11}, {28, 30}, {29, 31}};
        return pairs;
    }
};

struct Keypoint {
    Vec2 pixel = Vec2::Zero();
    bool visible = false;  // binary visibility as reported by the detector
};

struct KeypointDetection {
    std::int64_t detection_id = 0;
    int frame_index = 0;
    std::array<double, 4> bounding_box{0, 0, 0, 0};  // x0, y0, x1, y1 pixels
    std::string category;                            // vehicle-type hint, may be empty
    double category_confidence = 0.0;
    double score = 0.0;
    std::array<Keypoint, kKeypointCount> keypoints{};

    Vec2 box_center() const {
        return Vec2(0.5 * (bounding_box[0] + bounding_box[2]),
                    0.5 * (bounding_box[1] + bounding_box[3]));
    }

    int visible_count() const {
        int n = 0;
        for (const auto& kp : keypoints) n += kp.visible ? 1 : 0;
        return n;
    }
};

struct FrameDetections {
    int frame_index = 0;
    double timestamp = 0.0;
    std::vector<KeypointDetection> detections;
};

struct DetectionFileHeader {
    int image_width = 0;
    int image_height = 0;
    double frame_rate = 30.0;
};

struct DetectionSequence {
    DetectionFileHeader header;
    std::vector<FrameDetections> frames;
};

// One pixel-space vector per forward pair with both endpoints visible.
inline std::vector<Vec2> forward_direction_vectors(const KeypointDetection& d) {
    std::vector<Vec2> vectors;
    for (const auto& [front, rear] : KeypointSchema::forward_pairs()) {
        const auto& f = d.keypoints[static_cast<std::size_t>(front)];
        const auto& r = d.keypoints[static_cast<std::size_t>(rear)];
        if (f.visible && r.visible) vectors.push_back(f.pixel - r.pixel);
    }
    return vectors;
}

namespace detail {

inline void validate_detection(const KeypointDetection& d, const DetectionFileHeader& header,
                               const std::string& context) {
    if (d.score < 0.0 || d.score > 1.0)
        throw ParseError(context + ": score must be in [0, 1]");
    if (d.bounding_box[2] < d.bounding_box[0] || d.bounding_box[3] < d.bounding_box[1])
        throw ParseError(context + ": bounding box has negative extent");
    const double margin_x = 0.1 * header.image_width;
    const double margin_y = 0.1 * header.image_height;
    for (int k = 0; k < kKeypointCount; ++k) {
        const auto& kp = d.keypoints[static_cast<std::size_t>(k)];
        if (!kp.visible) continue;
        if (!KeypointSchema::detectable(k))
            throw ParseError(context + ": visibility set on non-detectable keypoint " +
                             std::to_string(k));
        if (kp.pixel.x() < -margin_x || kp.pixel.x() > header.image_width + margin_x ||
            kp.pixel.y() < -margin_y || kp.pixel.y() > header.image_height + margin_y)
            throw ParseError(context + ": visible keypoint " + std::to_string(k) +
                             " outside inflated image bounds");
    }
}

}  // namespace detail

inline std::string detections_to_string(const DetectionSequence& seq) {
    std::string out;
    io::json header{{"format", "skytrack-detections"},
                    {"version", 1},
                    {"image_width", seq.header.image_width},
                    {"image_height", seq.header.image_height},
                    {"frame_rate", seq.header.frame_rate}};
    out += header.dump();
    out += '\n';
    for (const auto& frame : seq.frames) {
        io::json line;
        line["frame"] = frame.frame_index;
        line["timestamp"] = frame.timestamp;
        auto dets = io::json::array();
        for (const auto& d : frame.detections) {
            io::json jd;
            jd["id"] = d.detection_id;
            jd["box"] = {d.bounding_box[0], d.bounding_box[1], d.bounding_box[2],
                         d.bounding_box[3]};
            jd["category"] = d.category;
            jd["category_confidence"] = d.category_confidence;
            jd["score"] = d.score;
            auto kps = io::json::array();
            for (const auto& kp : d.keypoints)
                kps.push_back({kp.pixel.x(), kp.pixel.y(), kp.visible ? 1 : 0});
            jd["keypoints"] = kps;
            dets.push_back(std::move(jd));
        }
        line["detections"] = dets;
        out += line.dump();
        out += '\n';
    }
    return out;
}

inline void save_detections(const std::filesystem::path& path, const DetectionSequence& seq) {
    io::atomic_write(path, detections_to_string(seq));
}

inline DetectionSequence parse_detections(const std::string& text) {
    const auto lines = io::split_lines(text);
    DetectionSequence seq;
    if (lines.empty() || lines[0].empty()) return seq;  // empty file -> empty sequence

    const auto header = io::parse_json(lines[0], "detections header");
    if (io::get_or<std::string>(header, "format", "") != "skytrack-detections")
        throw ParseError("detections: unexpected format tag");
    seq.header.image_width = io::require<int>(header, "image_width", "detections header");
    seq.header.image_height = io::require<int>(header, "image_height", "detections header");
    seq.header.frame_rate = io::get_or<double>(header, "frame_rate", 30.0);
    if (seq.header.image_width <= 0 || seq.header.image_height <= 0)
        throw ParseError("detections header: image size must be positive");
    if (!(seq.header.frame_rate > 0.0))
        throw ParseError("detections header: frame rate must be positive");

    double last_timestamp = -std::numeric_limits<double>::infinity();
    int last_frame = -1;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const std::string context = "detections line " + std::to_string(i + 1);
        const auto j = io::parse_json(lines[i], context);
        FrameDetections frame;
        frame.frame_index = io::require<int>(j, "frame", context);
        if (frame.frame_index <= last_frame)
            throw ParseError(context + ": frames must be strictly ascending");
        frame.timestamp = j.contains("timestamp")
                              ? io::require<double>(j, "timestamp", context)
                              : frame.frame_index / seq.header.frame_rate;
        if (frame.timestamp <= last_timestamp)
            throw ParseError(context + ": timestamps must be strictly increasing");
        std::vector<std::int64_t> seen_ids;
        for (const auto& jd : io::require<io::json>(j, "detections", context)) {
            KeypointDetection d;
            d.frame_index = frame.frame_index;
            d.detection_id = io::require<std::int64_t>(jd, "id", context);
            const std::string det_context =
                context + ", detection " + std::to_string(d.detection_id);
            for (std::int64_t id : seen_ids)
                if (id == d.detection_id)
                    throw ParseError(det_context + ": duplicate detection id in frame");
            seen_ids.push_back(d.detection_id);
            const auto box = io::require<std::vector<double>>(jd, "box", det_context);
            if (box.size() != 4) throw ParseError(det_context + ": box must have 4 entries");
            std::copy(box.begin(), box.end(), d.bounding_box.begin());
            d.category = io::get_or<std::string>(jd, "category", "");
            d.category_confidence = io::get_or<double>(jd, "category_confidence", 0.0);
            d.score = io::require<double>(jd, "score", det_context);
            const auto kps = io::require<io::json>(jd, "keypoints", det_context);
            if (!kps.is_array() || kps.size() != kKeypointCount)
                throw ParseError(det_context + ": keypoints must be an array of 33 entries");
            for (int k = 0; k < kKeypointCount; ++k) {
                const auto& jk = kps[static_cast<std::size_t>(k)];
                if (!jk.is_array() || jk.size() != 3)
                    throw ParseError(det_context + ": keypoint " + std::to_string(k) +
                                     " must be [u, v, visibility]");
                const double vis = jk[2].get<double>();
                if (vis != 0.0 && vis != 1.0)
                    throw ParseError(det_context + ": keypoint visibility must be 0 or 1");
                auto& kp = d.keypoints[static_cast<std::size_t>(k)];
                kp.pixel = Vec2(jk[0].get<double>(), jk[1].get<double>());
                kp.visible = vis == 1.0;
            }
            detail::validate_detection(d, seq.header, det_context);
            frame.detections.push_back(std::move(d));
        }
        last_timestamp = frame.timestamp;
        last_frame = frame.frame_index;
        seq.frames.push_back(std::move(frame));
    }
    return seq;
}

inline DetectionSequence load_detections(const std::filesystem::path& path) {
    return parse_detections(io::read_text_file(path));
}

}  // namespace skytrack
