#ifndef A2BIS_TENSOR_HPP_
#define A2BIS_TENSOR_HPP_

#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace a2bis {

// Dense H x W x C grid, row-major (H outer, W middle, C inner).
template <typename T>
struct Map3 {
    int h = 0, w = 0, c = 0;
    std::vector<T> v;

    Map3() = default;
    Map3(int h_, int w_, int c_, T fill = T(0)) : h(h_), w(w_), c(c_) {
        if (h < 1 || w < 1 || c < 1)
            throw std::invalid_argument("Map3: dimensions must be >= 1");
        v.assign(static_cast<size_t>(h) * w * c, fill);
    }

    T& at(int i, int j, int k) {
        return v[(static_cast<size_t>(i) * w + j) * c + k];
    }
    T at(int i, int j, int k) const {
        return v[(static_cast<size_t>(i) * w + j) * c + k];
    }
    size_t size() const { return v.size(); }

    bool same_shape(const Map3& o) const {
        return h == o.h && w == o.w && c == o.c;
    }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Map3<U> cast() const {
        Map3<U> out(h, w, c);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using DenseMap = Map3<float>;

struct Pixel {
    int i = 0;  // row
    int j = 0;  // column
    auto operator<=>(const Pixel&) const = default;
};

using PixelSet = std::vector<Pixel>;  // kept sorted row-major by convention

}  // namespace a2bis

#endif  // A2BIS_TENSOR_HPP_
