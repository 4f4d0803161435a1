#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "skytrack/keypoints.hpp"
#include "skytrack/shape_prior.hpp"

#include "helpers.hpp"

using namespace skytrack;
using namespace skytrack::testing;

TEST_CASE("schema matches the published keypoint table") {
    // Hard-coded copy of the table: id ranges and whether a detector sees them.
    struct Row {
        int lo, hi;
        bool detected;
    };
    const std::vector<Row> table = {
        {0, 3, true},    // roof top corners
        {4, 7, true},    // windshield corners
        {8, 11, true},   // light centers
        {12, 15, false}, // bumper corners
        {16, 19, false}, // wheel centers
        {20, 23, false}, // chassis bottom corners
        {24, 25, true},  // side mirrors
        {26, 27, false}, // front door window corners
        {28, 31, true},  // wheel-ground contact points
        {32, 32, true},  // front brand logo
    };
    REQUIRE(KeypointSchema::slots().size() == 33);
    int detectable = 0;
    for (const auto& row : table) {
        for (int id = row.lo; id <= row.hi; ++id) {
            CHECK(KeypointSchema::slots()[static_cast<std::size_t>(id)].id == id);
            CHECK(KeypointSchema::detectable(id) == row.detected);
            detectable += row.detected ? 1 : 0;
        }
    }
    CHECK(detectable == 19);
    CHECK(kDetectableKeypointCount == 19);
}

TEST_CASE("forward pairs are front/rear slots of detectable groups") {
    const std::vector<std::pair<int, int>> expected = {
        {0, 2}, {1, 3}, {4, 6}, {5, 7}, {8, 10}, {9, 11}, {28, 30}, {29, 31}};
    CHECK(KeypointSchema::forward_pairs() == expected);
    for (const auto& [front, rear] : KeypointSchema::forward_pairs()) {
        CHECK(KeypointSchema::detectable(front));
        CHECK(KeypointSchema::detectable(rear));
        CHECK(rear == front + 2);  // same quadruple, rear member
    }
}

TEST_CASE("left-right pairs cover every slot except the centerline logo") {
    std::set<int> seen;
    for (const auto& [r, l] : KeypointSchema::left_right_pairs()) {
        CHECK(l == r + 1);
        seen.insert(r);
        seen.insert(l);
    }
    CHECK(seen.size() == 32);
    CHECK_FALSE(seen.contains(32));
}

TEST_CASE("forward_direction_vectors is empty without visible endpoints") {
    KeypointDetection d;
    CHECK(forward_direction_vectors(d).empty());
}

TEST_CASE("forward_direction_vectors points along +u for an axis-aligned vehicle") {
    KeypointDetection d;
    auto set = [&](int slot, double u, double v) {
        d.keypoints[static_cast<std::size_t>(slot)] = {Vec2(u, v), true};
    };
    set(0, 110.0, 50.0);
    set(2, 100.0, 50.0);
    set(1, 110.0, 60.0);
    set(3, 100.0, 60.0);
    const auto vectors = forward_direction_vectors(d);
    REQUIRE(vectors.size() == 2);
    for (const auto& v : vectors) {
        CHECK(v.normalized().x() == Catch::Approx(1.0));
        CHECK(v.y() == Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("forward vectors follow the projected heading under a near-nadir camera") {
    const auto fleet = make_synthetic_fleet(10, 21);
    const auto prior = build_prior(fleet, 5);
    const auto view = make_aerial_view(Vec2(0, 0), 120.0, 4.0);
    const double psi = deg2rad(45.0);
    const auto det = render_detection(generate_shape(prior, VecX::Zero(5)).coords, 3.0, -2.0, psi,
                                      view);
    // Projected heading: lift the vehicle-frame forward axis to pixel space.
    const auto vectors = forward_direction_vectors(det);
    REQUIRE(vectors.size() == 8);
    const Vec2 origin_px = project(view.pose, view.intrinsics, Vec3(3.0, -2.0, 0.0));
    const Vec2 tip_px =
        project(view.pose, view.intrinsics, Vec3(3.0 + std::cos(psi), -2.0 + std::sin(psi), 0.0));
    const Vec2 heading_px = (tip_px - origin_px).normalized();
    for (const auto& v : vectors) {
        const double cosang = v.normalized().dot(heading_px);
        CHECK(std::acos(std::clamp(cosang, -1.0, 1.0)) < deg2rad(5.0));
    }
}

namespace {

DetectionSequence make_sample_sequence() {
    DetectionSequence seq;
    seq.header = {1920, 1080, 25.0};
    FrameDetections f0;
    f0.frame_index = 0;
    f0.timestamp = 0.0;
    KeypointDetection d;
    d.detection_id = 7;
    d.bounding_box = {100.0, 200.0, 300.0, 400.0};
    d.category = "sedan";
    d.category_confidence = 0.8;
    d.score = 0.95;
    for (int s = 0; s < kKeypointCount; ++s) {
        if (!KeypointSchema::detectable(s)) continue;
        d.keypoints[static_cast<std::size_t>(s)] = {Vec2(150.0 + s, 250.0 + 0.5 * s), true};
    }
    f0.detections.push_back(d);
    seq.frames.push_back(f0);
    FrameDetections f1;
    f1.frame_index = 1;
    f1.timestamp = 0.04;
    seq.frames.push_back(f1);
    return seq;
}

}  // namespace

TEST_CASE("detections survive a byte-identical save/load/save round trip") {
    const auto seq = make_sample_sequence();
    const std::string once = detections_to_string(seq);
    const auto reloaded = parse_detections(once);
    CHECK(detections_to_string(reloaded) == once);
    REQUIRE(reloaded.frames.size() == 2);
    CHECK(reloaded.frames[0].detections.size() == 1);
    CHECK(reloaded.frames[0].detections[0].visible_count() == 19);
}

TEST_CASE("empty detection file loads as an empty sequence") {
    const auto seq = parse_detections("");
    CHECK(seq.frames.empty());
}

TEST_CASE("malformed detection records are rejected with context") {
    const auto seq = make_sample_sequence();
    const std::string good = detections_to_string(seq);
    const auto lines = io::split_lines(good);

    SECTION("garbage line") {
        CHECK_THROWS_AS(parse_detections(lines[0] + "\n{not json\n"), ParseError);
    }
    SECTION("visibility on a non-detectable slot") {
        std::string bad = good;
        // slot 12 (bumper corner) is not detectable
        auto seq2 = seq;
        seq2.frames[0].detections[0].keypoints[12].visible = true;
        CHECK_THROWS_WITH(parse_detections(detections_to_string(seq2)),
                          Catch::Matchers::ContainsSubstring("non-detectable"));
    }
    SECTION("visible point far outside the image") {
        auto seq2 = seq;
        seq2.frames[0].detections[0].keypoints[0].pixel = Vec2(5000.0, 100.0);
        CHECK_THROWS_WITH(parse_detections(detections_to_string(seq2)),
                          Catch::Matchers::ContainsSubstring("inflated image bounds"));
    }
    SECTION("duplicate detection ids within a frame") {
        auto seq2 = seq;
        seq2.frames[0].detections.push_back(seq2.frames[0].detections[0]);
        CHECK_THROWS_WITH(parse_detections(detections_to_string(seq2)),
                          Catch::Matchers::ContainsSubstring("duplicate detection id"));
    }
    SECTION("non-increasing timestamps") {
        auto seq2 = seq;
        seq2.frames[1].timestamp = 0.0;
        CHECK_THROWS_WITH(parse_detections(detections_to_string(seq2)),
                          Catch::Matchers::ContainsSubstring("timestamps"));
    }
    SECTION("non-ascending frame indices") {
        auto seq2 = seq;
        seq2.frames[1].frame_index = 0;
        seq2.frames[1].timestamp = 1.0;
        CHECK_THROWS_AS(parse_detections(detections_to_string(seq2)), ParseError);
    }
    SECTION("score out of range") {
        auto seq2 = seq;
        seq2.frames[0].detections[0].score = 1.5;
        CHECK_THROWS_WITH(parse_detections(detections_to_string(seq2)),
                          Catch::Matchers::ContainsSubstring("score"));
    }
    SECTION("fractional visibility flag") {
        std::string text = good;
        const auto pos = text.find(",1]");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 3, ",0.5]");
        CHECK_THROWS_WITH(parse_detections(text),
                          Catch::Matchers::ContainsSubstring("visibility"));
    }
}

TEST_CASE("timestamps derive from the frame rate when absent") {
    io::json header{{"format", "skytrack-detections"}, {"version", 1}, {"image_width", 100},
                    {"image_height", 100}, {"frame_rate", 10.0}};
    std::string text = header.dump() + "\n";
    text += io::json{{"frame", 0}, {"detections", io::json::array()}}.dump() + "\n";
    text += io::json{{"frame", 3}, {"detections", io::json::array()}}.dump() + "\n";
    const auto seq = parse_detections(text);
    REQUIRE(seq.frames.size() == 2);
    CHECK(seq.frames[1].timestamp == Catch::Approx(0.3));
}
