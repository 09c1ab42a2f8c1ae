#pragma once

#include <array>

#include "lcnn/image.hpp"

namespace lcnn {

struct Point {
    double x = 0, y = 0;
};

// left eye, right eye, nose, left mouth corner, right mouth corner,
// in source-image pixel coordinates
struct Landmarks5 {
    Point left_eye, right_eye, nose, mouth_left, mouth_right;

    Point eye_midpoint() const {
        return {(left_eye.x + right_eye.x) / 2, (left_eye.y + right_eye.y) / 2};
    }
    Point mouth_midpoint() const {
        return {(mouth_left.x + mouth_right.x) / 2, (mouth_left.y + mouth_right.y) / 2};
    }
};

struct NormSpec {
    int size;          // square output, pixels
    double ec_mc_y;    // target eye-midpoint-to-mouth-midpoint distance
    double ec_y;       // target y of the eye midpoint

    // training: 144x144 / 48 / 48; testing: 128x128 / 48 / 40
    static NormSpec training() { return {144, 48.0, 48.0}; }
    static NormSpec testing() { return {128, 48.0, 40.0}; }
};

// p' = scale * R(angle) * p + (tx, ty)
struct SimilarityTransform {
    double angle = 0, scale = 1, tx = 0, ty = 0;

    Point apply(const Point& p) const;
    SimilarityTransform inverse() const;
};

// Rotates the eye line horizontal, scales the eye-to-mouth midpoint distance
// to spec.ec_mc_y, and places the eye midpoint at (size/2, ec_y).
SimilarityTransform compute_alignment(const Landmarks5& lm, const NormSpec& spec);

Landmarks5 transform_landmarks(const Landmarks5& lm, const SimilarityTransform& t);

// output(p) = bilinear sample of input at t^-1(p); out-of-bounds reads are 0
Image warp(const Image& input, const SimilarityTransform& t, int out_size);

}  // namespace lcnn
