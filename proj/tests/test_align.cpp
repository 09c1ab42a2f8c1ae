#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lcnn/align.hpp"
#include "lcnn/tensor.hpp"

using namespace lcnn;

namespace {

// eyes level at y=48 and 40px apart around x=72, mouth midpoint 48px below
// the eye midpoint: already canonical for the training spec
Landmarks5 canonical_landmarks() {
    Landmarks5 lm;
    lm.left_eye = {52, 48};
    lm.right_eye = {92, 48};
    lm.nose = {72, 72};
    lm.mouth_left = {62, 96};
    lm.mouth_right = {82, 96};
    return lm;
}

double dist(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

TEST_CASE("norm specs carry the published settings") {
    NormSpec train = NormSpec::training();
    CHECK(train.size == 144);
    CHECK(train.ec_mc_y == 48.0);
    CHECK(train.ec_y == 48.0);
    NormSpec test = NormSpec::testing();
    CHECK(test.size == 128);
    CHECK(test.ec_mc_y == 48.0);
    CHECK(test.ec_y == 40.0);
}

TEST_CASE("canonical landmarks give the identity transform") {
    SimilarityTransform t = compute_alignment(canonical_landmarks(), NormSpec::training());
    CHECK(std::abs(t.angle) < 1e-9);
    CHECK(std::abs(t.scale - 1.0) < 1e-9);
    CHECK(std::abs(t.tx) < 1e-9);
    CHECK(std::abs(t.ty) < 1e-9);
}

TEST_CASE("alignment recovers a known similarity transform") {
    SimilarityTransform applied;
    applied.angle = 17.0 * M_PI / 180.0;
    applied.scale = 1.3;
    applied.tx = 11.0;
    applied.ty = -7.0;

    Landmarks5 moved = transform_landmarks(canonical_landmarks(), applied);
    SimilarityTransform recovered = compute_alignment(moved, NormSpec::training());

    // recovered composes with the applied transform to the identity
    for (const Point& p : {Point{0, 0}, Point{72, 48}, Point{130, 20}, Point{-5, 88}}) {
        Point round_trip = recovered.apply(applied.apply(p));
        CHECK(std::abs(round_trip.x - p.x) < 1e-6);
        CHECK(std::abs(round_trip.y - p.y) < 1e-6);
    }

    // and the moved landmarks land back on the canonical targets
    Landmarks5 back = transform_landmarks(moved, recovered);
    CHECK(std::abs(back.eye_midpoint().x - 72.0) < 1e-6);
    CHECK(std::abs(back.eye_midpoint().y - 48.0) < 1e-6);
    CHECK(std::abs(dist(back.eye_midpoint(), back.mouth_midpoint()) - 48.0) < 1e-6);
    CHECK(std::abs(back.left_eye.y - back.right_eye.y) < 1e-6);
}

TEST_CASE("eye line is horizontal and targets hit for arbitrary landmarks") {
    Landmarks5 lm;
    lm.left_eye = {31.5, 44.2};
    lm.right_eye = {67.8, 52.9};
    lm.nose = {49.0, 66.0};
    lm.mouth_left = {36.1, 84.4};
    lm.mouth_right = {60.2, 88.0};

    NormSpec spec = NormSpec::testing();
    SimilarityTransform t = compute_alignment(lm, spec);
    Landmarks5 out = transform_landmarks(lm, t);

    // slope of the eye line after warping
    CHECK(std::abs(out.right_eye.y - out.left_eye.y) < 1e-6);
    CHECK(std::abs(out.eye_midpoint().x - 64.0) < 1e-6);
    CHECK(std::abs(out.eye_midpoint().y - spec.ec_y) < 1e-6);
    CHECK(std::abs(dist(out.eye_midpoint(), out.mouth_midpoint()) - spec.ec_mc_y) < 1e-6);

    // the 0.5 px placement bound on the named targets
    CHECK(std::abs(out.eye_midpoint().x - 64.0) < 0.5);
    CHECK(std::abs(out.eye_midpoint().y - 40.0) < 0.5);
}

TEST_CASE("degenerate landmark configurations are rejected") {
    Landmarks5 lm = canonical_landmarks();
    lm.right_eye = lm.left_eye;
    CHECK_THROWS_AS(compute_alignment(lm, NormSpec::training()), std::invalid_argument);

    Landmarks5 collapsed = canonical_landmarks();
    collapsed.mouth_left = {52, 48};
    collapsed.mouth_right = {92, 48};  // mouth midpoint == eye midpoint
    CHECK_THROWS_AS(compute_alignment(collapsed, NormSpec::training()),
                    std::invalid_argument);

    CHECK_THROWS_AS(compute_alignment(canonical_landmarks(), NormSpec{64, 48, 48}),
                    std::invalid_argument);
}

TEST_CASE("similarity transform inverse composes to the identity") {
    SimilarityTransform t;
    t.angle = -0.35;
    t.scale = 2.2;
    t.tx = -14;
    t.ty = 3.5;
    SimilarityTransform inv = t.inverse();
    for (const Point& p : {Point{0, 0}, Point{10, -4}, Point{-33, 7}}) {
        Point q = inv.apply(t.apply(p));
        CHECK(std::abs(q.x - p.x) < 1e-9);
        CHECK(std::abs(q.y - p.y) < 1e-9);
    }
    SimilarityTransform bad;
    bad.scale = 0.0;
    CHECK_THROWS_AS(bad.inverse(), std::invalid_argument);
}

TEST_CASE("warp with the identity is bit-exact on the integer grid") {
    Rng rng(12);
    Image img = make_image(50, 50);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform(0, 255));

    Image out = warp(img, SimilarityTransform{}, 40);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) CHECK(out.at(y, x) == img.at(y, x));
}

TEST_CASE("warp with integer translation shifts pixels") {
    Rng rng(13);
    Image img = make_image(30, 30);
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform(0, 255));

    SimilarityTransform t;
    t.tx = 5;
    t.ty = 3;
    Image out = warp(img, t, 30);
    for (int y = 3; y < 30; ++y)
        for (int x = 5; x < 30; ++x) CHECK(out.at(y, x) == img.at(y - 3, x - 5));
    // the uncovered border is filled with zeros
    for (int x = 0; x < 30; ++x) CHECK(out.at(0, x) == 0.0f);
}

TEST_CASE("identity warp of an all-white image stays all-white") {
    Image img = make_image(64, 64, 255.0f);
    Image out = warp(img, SimilarityTransform{}, 64);
    for (float p : out.pixels) CHECK(p == 255.0f);
}

TEST_CASE("warped landmarks of a rotated face land on the test spec targets") {
    SimilarityTransform pose;
    pose.angle = -0.22;
    pose.scale = 0.8;
    pose.tx = 20;
    pose.ty = 14;
    Landmarks5 lm = transform_landmarks(canonical_landmarks(), pose);

    NormSpec spec = NormSpec::testing();
    SimilarityTransform t = compute_alignment(lm, spec);
    Landmarks5 warped = transform_landmarks(lm, t);

    CHECK(std::abs(warped.eye_midpoint().x - spec.size / 2.0) < 0.5);
    CHECK(std::abs(warped.eye_midpoint().y - spec.ec_y) < 0.5);
    CHECK(std::abs(dist(warped.eye_midpoint(), warped.mouth_midpoint()) - spec.ec_mc_y) <
          0.5);
}
