#include "lcnn/align.hpp"

#include <cmath>
#include <stdexcept>

namespace lcnn {

Point SimilarityTransform::apply(const Point& p) const {
    const double c = std::cos(angle), s = std::sin(angle);
    return {scale * (c * p.x - s * p.y) + tx, scale * (s * p.x + c * p.y) + ty};
}

SimilarityTransform SimilarityTransform::inverse() const {
    if (scale <= 0) throw std::invalid_argument("similarity transform: scale must be > 0");
    SimilarityTransform inv;
    inv.angle = -angle;
    inv.scale = 1.0 / scale;
    // t' = -1/s * R(-a) * t
    const double c = std::cos(-angle), s = std::sin(-angle);
    inv.tx = -(c * tx - s * ty) / scale;
    inv.ty = -(s * tx + c * ty) / scale;
    return inv;
}

SimilarityTransform compute_alignment(const Landmarks5& lm, const NormSpec& spec) {
    if (spec.ec_y + spec.ec_mc_y >= spec.size)
        throw std::invalid_argument("norm spec: ec_y + ec_mc_y must be < output size");

    const double ex = lm.right_eye.x - lm.left_eye.x;
    const double ey = lm.right_eye.y - lm.left_eye.y;
    if (std::hypot(ex, ey) < 1e-12)
        throw std::invalid_argument("alignment: eye points coincide");

    const Point eyes = lm.eye_midpoint();
    const Point mouth = lm.mouth_midpoint();
    const double dist = std::hypot(mouth.x - eyes.x, mouth.y - eyes.y);
    if (dist < 1e-12)
        throw std::invalid_argument("alignment: eye and mouth midpoints coincide");

    SimilarityTransform t;
    t.angle = -std::atan2(ey, ex);  // brings the eye line horizontal
    t.scale = spec.ec_mc_y / dist;  // rotation preserves the midpoint distance

    const double c = std::cos(t.angle), s = std::sin(t.angle);
    const double rx = t.scale * (c * eyes.x - s * eyes.y);
    const double ry = t.scale * (s * eyes.x + c * eyes.y);
    t.tx = spec.size / 2.0 - rx;
    t.ty = spec.ec_y - ry;
    return t;
}

Landmarks5 transform_landmarks(const Landmarks5& lm, const SimilarityTransform& t) {
    Landmarks5 out;
    out.left_eye = t.apply(lm.left_eye);
    out.right_eye = t.apply(lm.right_eye);
    out.nose = t.apply(lm.nose);
    out.mouth_left = t.apply(lm.mouth_left);
    out.mouth_right = t.apply(lm.mouth_right);
    return out;
}

Image warp(const Image& input, const SimilarityTransform& t, int out_size) {
    const SimilarityTransform inv = t.inverse();
    Image out = make_image(out_size, out_size);

    for (int y = 0; y < out_size; ++y) {
        for (int x = 0; x < out_size; ++x) {
            const Point src = inv.apply({static_cast<double>(x), static_cast<double>(y)});
            const double fx = std::floor(src.x), fy = std::floor(src.y);
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const double ax = src.x - fx, ay = src.y - fy;

            auto sample = [&](int yy, int xx) -> double {
                if (yy < 0 || yy >= input.height || xx < 0 || xx >= input.width) return 0.0;
                return input.at(yy, xx);
            };
            // skip zero-weight neighbors so integer-grid samples stay exact
            double v = 0.0;
            if (ax < 1.0 && ay < 1.0) v += (1 - ax) * (1 - ay) * sample(y0, x0);
            if (ax > 0.0 && ay < 1.0) v += ax * (1 - ay) * sample(y0, x0 + 1);
            if (ax < 1.0 && ay > 0.0) v += (1 - ax) * ay * sample(y0 + 1, x0);
            if (ax > 0.0 && ay > 0.0) v += ax * ay * sample(y0 + 1, x0 + 1);
            out.at(y, x) = static_cast<float>(v);
        }
    }
    return out;
}

}  // namespace lcnn
