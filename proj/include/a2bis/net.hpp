#ifndef A2BIS_NET_HPP_
#define A2BIS_NET_HPP_

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "a2bis/losses.hpp"
#include "a2bis/tensor.hpp"

namespace a2bis {

struct NetConfig {
    int stem_channels = 8;
    std::vector<int> block_channels{8, 16};
    std::vector<int> n_asa{2, 2};
    std::vector<int> stride2_blocks{1};  // blocks whose output conv has stride 2
    int head_channels = 16;
    int n_cls = 2;
    int in_h = 64, in_w = 64;

    int seg_channels() const { return n_cls + 2; }
    bool block_strided(int b) const {
        return std::find(stride2_blocks.begin(), stride2_blocks.end(), b) !=
               stride2_blocks.end();
    }
    void validate() const {
        if (block_channels.empty() || block_channels.size() != n_asa.size())
            throw std::invalid_argument("NetConfig: blocks/n_asa mismatch");
        for (int n : n_asa)
            if (n < 1) throw std::invalid_argument("NetConfig: n_asa must be >= 1");
        int d = stem_channels;
        for (size_t b = 0; b < block_channels.size(); ++b) {
            if (d % 2 != 0)
                throw std::invalid_argument("NetConfig: block input channels must be even");
            d = block_channels[b];
        }
    }
};

// Flat parameter store addressable by layer name; std::map keeps a
// deterministic iteration order for EMA / optimizer sweeps.
template <typename T>
struct ParamStore {
    std::map<std::string, std::vector<T>> tensors;
    std::map<std::string, std::vector<int>> shapes;

    size_t total() const {
        size_t n = 0;
        for (const auto& [k, v] : tensors) n += v.size();
        return n;
    }
    bool aligned(const ParamStore& o) const {
        if (tensors.size() != o.tensors.size()) return false;
        auto a = tensors.begin();
        auto b = o.tensors.begin();
        for (; a != tensors.end(); ++a, ++b)
            if (a->first != b->first || a->second.size() != b->second.size()) return false;
        return true;
    }
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        out.shapes = shapes;
        for (const auto& [k, v] : tensors) {
            std::vector<U> u(v.size());
            for (size_t i = 0; i < v.size(); ++i) u[i] = static_cast<U>(v[i]);
            out.tensors[k] = std::move(u);
        }
        return out;
    }
};

// ---------------- primitive ops ----------------

namespace nn {

// kernel layout: ((ky*kw + kx)*Cin + ci)*Cout + co
template <typename T>
inline Map3<T> conv2d(const Map3<T>& in, const std::vector<T>& kernel,
                      const std::vector<T>& bias, int ksize, int dilation, int stride) {
    const int cin = in.c;
    const int cout = static_cast<int>(bias.size());
    const int pad = (ksize == 1) ? 0 : dilation;
    const int oh = (in.h + 2 * pad - (dilation * (ksize - 1) + 1)) / stride + 1;
    const int ow = (in.w + 2 * pad - (dilation * (ksize - 1) + 1)) / stride + 1;
    Map3<T> out(oh, ow, cout);
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            T* o = &out.v[(static_cast<size_t>(oy) * ow + ox) * cout];
            for (int co = 0; co < cout; ++co) o[co] = bias[co];
            for (int ky = 0; ky < ksize; ++ky) {
                int iy = oy * stride - pad + ky * dilation;
                if (iy < 0 || iy >= in.h) continue;
                for (int kx = 0; kx < ksize; ++kx) {
                    int ix = ox * stride - pad + kx * dilation;
                    if (ix < 0 || ix >= in.w) continue;
                    const T* row = &in.v[(static_cast<size_t>(iy) * in.w + ix) * cin];
                    const T* kr = &kernel[(static_cast<size_t>(ky) * ksize + kx) * cin * cout];
                    for (int ci = 0; ci < cin; ++ci) {
                        T a = row[ci];
                        const T* kc = kr + static_cast<size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) o[co] += a * kc[co];
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
inline void conv2d_backward(const Map3<T>& in, const std::vector<T>& kernel,
                            const Map3<T>& d_out, int ksize, int dilation, int stride,
                            Map3<T>& d_in, std::vector<T>& d_kernel,
                            std::vector<T>& d_bias) {
    const int cin = in.c;
    const int cout = d_out.c;
    const int pad = (ksize == 1) ? 0 : dilation;
    d_in = Map3<T>(in.h, in.w, in.c, T(0));
    d_kernel.assign(kernel.size(), T(0));
    d_bias.assign(static_cast<size_t>(cout), T(0));
    for (int oy = 0; oy < d_out.h; ++oy) {
        for (int ox = 0; ox < d_out.w; ++ox) {
            const T* go = &d_out.v[(static_cast<size_t>(oy) * d_out.w + ox) * cout];
            for (int co = 0; co < cout; ++co) d_bias[co] += go[co];
            for (int ky = 0; ky < ksize; ++ky) {
                int iy = oy * stride - pad + ky * dilation;
                if (iy < 0 || iy >= in.h) continue;
                for (int kx = 0; kx < ksize; ++kx) {
                    int ix = ox * stride - pad + kx * dilation;
                    if (ix < 0 || ix >= in.w) continue;
                    const T* row = &in.v[(static_cast<size_t>(iy) * in.w + ix) * cin];
                    T* drow = &d_in.v[(static_cast<size_t>(iy) * in.w + ix) * cin];
                    const T* kr = &kernel[(static_cast<size_t>(ky) * ksize + kx) * cin * cout];
                    T* dkr = &d_kernel[(static_cast<size_t>(ky) * ksize + kx) * cin * cout];
                    for (int ci = 0; ci < cin; ++ci) {
                        const T* kc = kr + static_cast<size_t>(ci) * cout;
                        T* dkc = dkr + static_cast<size_t>(ci) * cout;
                        T a = row[ci];
                        T acc = T(0);
                        for (int co = 0; co < cout; ++co) {
                            acc += kc[co] * go[co];
                            dkc[co] += a * go[co];
                        }
                        drow[ci] += acc;
                    }
                }
            }
        }
    }
}

inline constexpr double kLnEps = 1e-5;

template <typename T>
struct LnCache {
    Map3<T> xhat;
    std::vector<T> invstd;  // per pixel
};

// Per-pixel layer norm over channels, then per-channel affine.
template <typename T>
inline Map3<T> layer_norm(const Map3<T>& x, const std::vector<T>& scale,
                          const std::vector<T>& shift, LnCache<T>* cache = nullptr) {
    const int C = x.c;
    Map3<T> out(x.h, x.w, C);
    Map3<T> xhat(x.h, x.w, C);
    std::vector<T> invstd(static_cast<size_t>(x.h) * x.w);
    const size_t npix = invstd.size();
    for (size_t p = 0; p < npix; ++p) {
        const T* row = &x.v[p * C];
        double mean = 0;
        for (int c = 0; c < C; ++c) mean += row[c];
        mean /= C;
        double var = 0;
        for (int c = 0; c < C; ++c) {
            double d = row[c] - mean;
            var += d * d;
        }
        var /= C;
        double is = 1.0 / std::sqrt(var + kLnEps);
        invstd[p] = static_cast<T>(is);
        for (int c = 0; c < C; ++c) {
            T xh = static_cast<T>((row[c] - mean) * is);
            xhat.v[p * C + c] = xh;
            out.v[p * C + c] = scale[c] * xh + shift[c];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->invstd = std::move(invstd);
    }
    return out;
}

template <typename T>
inline void layer_norm_backward(const LnCache<T>& cache, const std::vector<T>& scale,
                                const Map3<T>& d_out, Map3<T>& d_in,
                                std::vector<T>& d_scale, std::vector<T>& d_shift) {
    const int C = cache.xhat.c;
    d_in = Map3<T>(cache.xhat.h, cache.xhat.w, C);
    d_scale.assign(static_cast<size_t>(C), T(0));
    d_shift.assign(static_cast<size_t>(C), T(0));
    const size_t npix = cache.invstd.size();
    for (size_t p = 0; p < npix; ++p) {
        const T* xh = &cache.xhat.v[p * C];
        const T* go = &d_out.v[p * C];
        double sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int c = 0; c < C; ++c) {
            double dxhat = static_cast<double>(go[c]) * scale[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[c];
            d_scale[c] += go[c] * xh[c];
            d_shift[c] += go[c];
        }
        double is = cache.invstd[p];
        for (int c = 0; c < C; ++c) {
            double dxhat = static_cast<double>(go[c]) * scale[c];
            d_in.v[p * C + c] = static_cast<T>(
                is * (dxhat - sum_dxhat / C - static_cast<double>(xh[c]) * sum_dxhat_xhat / C));
        }
    }
}

// Softmax over the spatial grid, independently per channel.
template <typename T>
inline Map3<T> spatial_softmax(const Map3<T>& m) {
    const int C = m.c;
    const size_t npix = static_cast<size_t>(m.h) * m.w;
    Map3<T> out(m.h, m.w, C);
    for (int c = 0; c < C; ++c) {
        double mx = -1e300;
        for (size_t p = 0; p < npix; ++p) mx = std::max(mx, static_cast<double>(m.v[p * C + c]));
        double z = 0;
        for (size_t p = 0; p < npix; ++p) {
            double e = std::exp(static_cast<double>(m.v[p * C + c]) - mx);
            out.v[p * C + c] = static_cast<T>(e);
            z += e;
        }
        double inv = 1.0 / z;
        for (size_t p = 0; p < npix; ++p)
            out.v[p * C + c] = static_cast<T>(out.v[p * C + c] * inv);
    }
    return out;
}

template <typename T>
inline Map3<T> spatial_softmax_backward(const Map3<T>& y, const Map3<T>& d_out) {
    const int C = y.c;
    const size_t npix = static_cast<size_t>(y.h) * y.w;
    Map3<T> d_in(y.h, y.w, C);
    for (int c = 0; c < C; ++c) {
        double dot = 0;
        for (size_t p = 0; p < npix; ++p)
            dot += static_cast<double>(y.v[p * C + c]) * d_out.v[p * C + c];
        for (size_t p = 0; p < npix; ++p)
            d_in.v[p * C + c] = static_cast<T>(
                y.v[p * C + c] * (static_cast<double>(d_out.v[p * C + c]) - dot));
    }
    return d_in;
}

// Softmax over channels, per pixel.
template <typename T>
inline Map3<T> channel_softmax(const Map3<T>& m) {
    const int C = m.c;
    const size_t npix = static_cast<size_t>(m.h) * m.w;
    Map3<T> out(m.h, m.w, C);
    for (size_t p = 0; p < npix; ++p) {
        double mx = -1e300;
        for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(m.v[p * C + c]));
        double z = 0;
        for (int c = 0; c < C; ++c) {
            double e = std::exp(static_cast<double>(m.v[p * C + c]) - mx);
            out.v[p * C + c] = static_cast<T>(e);
            z += e;
        }
        for (int c = 0; c < C; ++c)
            out.v[p * C + c] = static_cast<T>(out.v[p * C + c] / z);
    }
    return out;
}

template <typename T>
inline Map3<T> channel_softmax_backward(const Map3<T>& y, const Map3<T>& d_out) {
    const int C = y.c;
    const size_t npix = static_cast<size_t>(y.h) * y.w;
    Map3<T> d_in(y.h, y.w, C);
    for (size_t p = 0; p < npix; ++p) {
        double dot = 0;
        for (int c = 0; c < C; ++c)
            dot += static_cast<double>(y.v[p * C + c]) * d_out.v[p * C + c];
        for (int c = 0; c < C; ++c)
            d_in.v[p * C + c] = static_cast<T>(
                y.v[p * C + c] * (static_cast<double>(d_out.v[p * C + c]) - dot));
    }
    return d_in;
}

template <typename T>
inline Map3<T> bilinear_upsample(const Map3<T>& in, int oh, int ow) {
    Map3<T> out(oh, ow, in.c);
    const double sy = static_cast<double>(in.h) / oh;
    const double sx = static_cast<double>(in.w) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, in.h - 1), y1c = std::clamp(y0 + 1, 0, in.h - 1);
        for (int ox = 0; ox < ow; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, in.w - 1), x1c = std::clamp(x0 + 1, 0, in.w - 1);
            for (int c = 0; c < in.c; ++c) {
                double v = (1 - wy) * ((1 - wx) * in.at(y0c, x0c, c) + wx * in.at(y0c, x1c, c)) +
                           wy * ((1 - wx) * in.at(y1c, x0c, c) + wx * in.at(y1c, x1c, c));
                out.at(oy, ox, c) = static_cast<T>(v);
            }
        }
    }
    return out;
}

template <typename T>
inline Map3<T> bilinear_upsample_backward(const Map3<T>& d_out, int ih, int iw) {
    Map3<T> d_in(ih, iw, d_out.c, T(0));
    const double sy = static_cast<double>(ih) / d_out.h;
    const double sx = static_cast<double>(iw) / d_out.w;
    for (int oy = 0; oy < d_out.h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, ih - 1), y1c = std::clamp(y0 + 1, 0, ih - 1);
        for (int ox = 0; ox < d_out.w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, iw - 1), x1c = std::clamp(x0 + 1, 0, iw - 1);
            for (int c = 0; c < d_out.c; ++c) {
                double g = d_out.at(oy, ox, c);
                d_in.at(y0c, x0c, c) += static_cast<T>((1 - wy) * (1 - wx) * g);
                d_in.at(y0c, x1c, c) += static_cast<T>((1 - wy) * wx * g);
                d_in.at(y1c, x0c, c) += static_cast<T>(wy * (1 - wx) * g);
                d_in.at(y1c, x1c, c) += static_cast<T>(wy * wx * g);
            }
        }
    }
    return d_in;
}

}  // namespace nn

// ---------------- the reference network ----------------

template <typename T>
struct NetCache {
    struct Asa {
        Map3<T> f_out, k, q, v, attn, prod, pre_ln_in;
        nn::LnCache<T> ln;
        Map3<T> out;
    };
    struct Block {
        Map3<T> in;
        nn::LnCache<T> ln_in;
        Map3<T> x_norm;
        std::vector<Asa> asa;
        Map3<T> concat;
        Map3<T> conv_out;
        nn::LnCache<T> ln_out;
        Map3<T> out;
    };
    struct Head {
        Map3<T> in, h1_raw, h1, h2_raw, h2, raw;
    };
    Map3<T> input;
    Map3<T> stem_out;
    std::vector<Block> blocks;
    Map3<T> upsampled;
    Head skl, seg, box;
    HeadMaps<T> outputs;
    bool valid = false;
};

template <typename T>
class Net {
  public:
    explicit Net(NetConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const NetConfig& config() const { return cfg_; }

    // name -> shape registry, fixed by the config
    std::map<std::string, std::vector<int>> shape_registry() const {
        std::map<std::string, std::vector<int>> reg;
        auto conv = [&](const std::string& name, int k, int cin, int cout) {
            reg[name + ".kernel"] = {k, k, cin, cout};
            reg[name + ".bias"] = {cout};
        };
        auto ln = [&](const std::string& name, int c) {
            reg[name + ".scale"] = {c};
            reg[name + ".shift"] = {c};
        };
        conv("stem", 3, 3, cfg_.stem_channels);
        int d = cfg_.stem_channels;
        for (size_t b = 0; b < cfg_.block_channels.size(); ++b) {
            std::string pb = "block" + std::to_string(b);
            ln(pb + ".ln_in", d);
            int half = d / 2;
            for (int n = 0; n < cfg_.n_asa[b]; ++n) {
                std::string pa = pb + ".asa" + std::to_string(n);
                conv(pa + ".f", 1, d, half);
                conv(pa + ".k", 3, half, half);
                conv(pa + ".q", 3, half, half);
                conv(pa + ".v", 3, half, half);
                ln(pa + ".ln", half);
            }
            int dcat = d + cfg_.n_asa[b] * half;
            conv(pb + ".out", 3, dcat, cfg_.block_channels[b]);
            ln(pb + ".ln_out", cfg_.block_channels[b]);
            d = cfg_.block_channels[b];
        }
        auto head = [&](const std::string& name, int out_c) {
            conv(name + ".conv0", 3, d, cfg_.head_channels);
            conv(name + ".conv1", 3, cfg_.head_channels, cfg_.head_channels);
            conv(name + ".conv2", 3, cfg_.head_channels, out_c);
        };
        head("head_skl", 1);
        head("head_seg", cfg_.seg_channels());
        head("head_box", 5);
        return reg;
    }

    // He fan-in kernels, zero biases/shifts, unit scales; the final skeleton
    // bias starts at -2 so early skeleton predictions are sparse.
    ParamStore<T> init_params(uint64_t seed) const {
        ParamStore<T> p;
        p.shapes = shape_registry();
        std::mt19937_64 rng(seed);
        for (const auto& [name, shape] : p.shapes) {
            size_t n = 1;
            for (int s : shape) n *= static_cast<size_t>(s);
            std::vector<T> t(n, T(0));
            if (name.ends_with(".kernel")) {
                int fan_in = shape[0] * shape[1] * shape[2];
                std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
                for (auto& x : t) x = static_cast<T>(dist(rng));
            } else if (name.ends_with(".scale")) {
                std::fill(t.begin(), t.end(), T(1));
            }
            p.tensors[name] = std::move(t);
        }
        std::fill(p.tensors["head_skl.conv2.bias"].begin(),
                  p.tensors["head_skl.conv2.bias"].end(), T(-2));
        return p;
    }

    HeadMaps<T> forward(const Map3<T>& image, const ParamStore<T>& params,
                        NetCache<T>* cache = nullptr) const {
        if (image.h != cfg_.in_h || image.w != cfg_.in_w || image.c != 3)
            throw std::invalid_argument("net forward: image shape mismatch");
        NetCache<T> local;
        NetCache<T>& cc = cache ? *cache : local;
        cc = NetCache<T>{};
        cc.input = image;

        auto& P = params.tensors;
        auto k3 = [&](const std::string& n) -> const std::vector<T>& { return P.at(n); };

        cc.stem_out = nn::conv2d(image, k3("stem.kernel"), k3("stem.bias"), 3, 1, 2);

        Map3<T> x = cc.stem_out;
        cc.blocks.resize(cfg_.block_channels.size());
        for (size_t b = 0; b < cfg_.block_channels.size(); ++b) {
            auto& bc = cc.blocks[b];
            std::string pb = "block" + std::to_string(b);
            bc.in = x;
            bc.x_norm = nn::layer_norm(x, k3(pb + ".ln_in.scale"), k3(pb + ".ln_in.shift"),
                                       &bc.ln_in);
            int half = x.c / 2;
            bc.asa.resize(static_cast<size_t>(cfg_.n_asa[b]));
            std::vector<const Map3<T>*> parts;
            parts.push_back(&bc.x_norm);
            for (int n = 0; n < cfg_.n_asa[b]; ++n) {
                auto& ac = bc.asa[static_cast<size_t>(n)];
                std::string pa = pb + ".asa" + std::to_string(n);
                int rate = n + 1;
                ac.f_out = nn::conv2d(bc.x_norm, k3(pa + ".f.kernel"), k3(pa + ".f.bias"),
                                      1, 1, 1);
                ac.k = nn::conv2d(ac.f_out, k3(pa + ".k.kernel"), k3(pa + ".k.bias"), 3,
                                  rate, 1);
                ac.q = nn::conv2d(ac.f_out, k3(pa + ".q.kernel"), k3(pa + ".q.bias"), 3,
                                  rate, 1);
                ac.v = nn::conv2d(ac.f_out, k3(pa + ".v.kernel"), k3(pa + ".v.bias"), 3,
                                  rate, 1);
                Map3<T> m(ac.k.h, ac.k.w, half);
                for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = ac.k.v[i] * ac.q.v[i];
                ac.attn = nn::spatial_softmax(m);
                ac.prod = Map3<T>(ac.v.h, ac.v.w, half);
                for (size_t i = 0; i < ac.prod.v.size(); ++i)
                    ac.prod.v[i] = ac.v.v[i] * ac.attn.v[i];
                ac.out = nn::layer_norm(ac.prod, k3(pa + ".ln.scale"), k3(pa + ".ln.shift"),
                                        &ac.ln);
                parts.push_back(&ac.out);
            }
            // channel concat
            int dcat = x.c + cfg_.n_asa[b] * half;
            bc.concat = Map3<T>(x.h, x.w, dcat);
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    int off = 0;
                    for (const Map3<T>* part : parts)
                        for (int c = 0; c < part->c; ++c)
                            bc.concat.at(i, j, off++) = part->at(i, j, c);
                }
            int stride = cfg_.block_strided(static_cast<int>(b)) ? 2 : 1;
            bc.conv_out = nn::conv2d(bc.concat, k3(pb + ".out.kernel"), k3(pb + ".out.bias"),
                                     3, 1, stride);
            bc.out = nn::layer_norm(bc.conv_out, k3(pb + ".ln_out.scale"),
                                    k3(pb + ".ln_out.shift"), &bc.ln_out);
            x = bc.out;
        }

        cc.upsampled = nn::bilinear_upsample(x, cfg_.in_h, cfg_.in_w);

        auto run_head = [&](const std::string& name, typename NetCache<T>::Head& hc) {
            hc.in = cc.upsampled;
            hc.h1_raw = nn::conv2d(hc.in, k3(name + ".conv0.kernel"), k3(name + ".conv0.bias"),
                                   3, 1, 1);
            hc.h1 = hc.h1_raw;
            for (auto& v : hc.h1.v) v = std::max(v, T(0));
            hc.h2_raw = nn::conv2d(hc.h1, k3(name + ".conv1.kernel"), k3(name + ".conv1.bias"),
                                   3, 1, 1);
            hc.h2 = hc.h2_raw;
            for (auto& v : hc.h2.v) v = std::max(v, T(0));
            hc.raw = nn::conv2d(hc.h2, k3(name + ".conv2.kernel"), k3(name + ".conv2.bias"),
                                3, 1, 1);
        };
        run_head("head_skl", cc.skl);
        run_head("head_seg", cc.seg);
        run_head("head_box", cc.box);

        HeadMaps<T> out;
        out.skl = cc.skl.raw;
        for (auto& v : out.skl.v) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
        out.seg = nn::channel_softmax(cc.seg.raw);
        out.box = cc.box.raw;
        cc.outputs = out;
        cc.valid = true;
        return out;
    }

    // d_out holds gradients with respect to the post-activation head maps.
    ParamStore<T> backward(const NetCache<T>& cache, const ParamStore<T>& params,
                           const HeadMaps<T>& d_out) const {
        if (!cache.valid) throw std::invalid_argument("net backward: stale cache");
        ParamStore<T> g;
        g.shapes = params.shapes;
        for (const auto& [name, t] : params.tensors)
            g.tensors[name] = std::vector<T>(t.size(), T(0));
        auto& P = params.tensors;

        // activation backward
        Map3<T> d_skl_raw = d_out.skl;
        for (size_t i = 0; i < d_skl_raw.v.size(); ++i) {
            T y = cache.outputs.skl.v[i];
            d_skl_raw.v[i] = static_cast<T>(d_out.skl.v[i] * y * (T(1) - y));
        }
        Map3<T> d_seg_raw = nn::channel_softmax_backward(cache.outputs.seg, d_out.seg);
        Map3<T> d_box_raw = d_out.box;

        Map3<T> d_upsampled(cache.upsampled.h, cache.upsampled.w, cache.upsampled.c, T(0));
        auto back_head = [&](const std::string& name, const typename NetCache<T>::Head& hc,
                             const Map3<T>& d_raw) {
            Map3<T> d_h2, d_h1, d_in;
            std::vector<T> dk, db;
            nn::conv2d_backward(hc.h2, P.at(name + ".conv2.kernel"), d_raw, 3, 1, 1, d_h2,
                                dk, db);
            add_to(g, name + ".conv2.kernel", dk);
            add_to(g, name + ".conv2.bias", db);
            for (size_t i = 0; i < d_h2.v.size(); ++i)
                if (hc.h2_raw.v[i] <= 0) d_h2.v[i] = 0;
            nn::conv2d_backward(hc.h1, P.at(name + ".conv1.kernel"), d_h2, 3, 1, 1, d_h1,
                                dk, db);
            add_to(g, name + ".conv1.kernel", dk);
            add_to(g, name + ".conv1.bias", db);
            for (size_t i = 0; i < d_h1.v.size(); ++i)
                if (hc.h1_raw.v[i] <= 0) d_h1.v[i] = 0;
            nn::conv2d_backward(hc.in, P.at(name + ".conv0.kernel"), d_h1, 3, 1, 1, d_in,
                                dk, db);
            add_to(g, name + ".conv0.kernel", dk);
            add_to(g, name + ".conv0.bias", db);
            for (size_t i = 0; i < d_upsampled.v.size(); ++i) d_upsampled.v[i] += d_in.v[i];
        };
        back_head("head_skl", cache.skl, d_skl_raw);
        back_head("head_seg", cache.seg, d_seg_raw);
        back_head("head_box", cache.box, d_box_raw);

        const auto& last = cache.blocks.back().out;
        Map3<T> d_x = nn::bilinear_upsample_backward(d_upsampled, last.h, last.w);

        for (size_t bi = cache.blocks.size(); bi-- > 0;) {
            const auto& bc = cache.blocks[bi];
            std::string pb = "block" + std::to_string(bi);
            int stride = cfg_.block_strided(static_cast<int>(bi)) ? 2 : 1;
            int half = bc.in.c / 2;

            Map3<T> d_conv_out;
            std::vector<T> ds, dh;
            nn::layer_norm_backward(bc.ln_out, P.at(pb + ".ln_out.scale"), d_x, d_conv_out,
                                    ds, dh);
            add_to(g, pb + ".ln_out.scale", ds);
            add_to(g, pb + ".ln_out.shift", dh);

            Map3<T> d_concat;
            std::vector<T> dk, db;
            nn::conv2d_backward(bc.concat, P.at(pb + ".out.kernel"), d_conv_out, 3, 1,
                                stride, d_concat, dk, db);
            add_to(g, pb + ".out.kernel", dk);
            add_to(g, pb + ".out.bias", db);

            // split concat gradient
            Map3<T> d_xnorm(bc.in.h, bc.in.w, bc.in.c, T(0));
            std::vector<Map3<T>> d_asa_out;
            for (int n = 0; n < cfg_.n_asa[bi]; ++n)
                d_asa_out.emplace_back(bc.in.h, bc.in.w, half, T(0));
            for (int i = 0; i < bc.in.h; ++i)
                for (int j = 0; j < bc.in.w; ++j) {
                    int off = 0;
                    for (int c = 0; c < bc.in.c; ++c)
                        d_xnorm.at(i, j, c) = d_concat.at(i, j, off++);
                    for (int n = 0; n < cfg_.n_asa[bi]; ++n)
                        for (int c = 0; c < half; ++c)
                            d_asa_out[static_cast<size_t>(n)].at(i, j, c) =
                                d_concat.at(i, j, off++);
                }

            for (int n = 0; n < cfg_.n_asa[bi]; ++n) {
                const auto& ac = bc.asa[static_cast<size_t>(n)];
                std::string pa = pb + ".asa" + std::to_string(n);
                int rate = n + 1;

                Map3<T> d_prod;
                nn::layer_norm_backward(ac.ln, P.at(pa + ".ln.scale"),
                                        d_asa_out[static_cast<size_t>(n)], d_prod, ds, dh);
                add_to(g, pa + ".ln.scale", ds);
                add_to(g, pa + ".ln.shift", dh);

                Map3<T> d_v(ac.v.h, ac.v.w, half), d_attn(ac.v.h, ac.v.w, half);
                for (size_t i = 0; i < d_prod.v.size(); ++i) {
                    d_v.v[i] = d_prod.v[i] * ac.attn.v[i];
                    d_attn.v[i] = d_prod.v[i] * ac.v.v[i];
                }
                Map3<T> d_m = nn::spatial_softmax_backward(ac.attn, d_attn);
                Map3<T> d_k(ac.k.h, ac.k.w, half), d_q(ac.k.h, ac.k.w, half);
                for (size_t i = 0; i < d_m.v.size(); ++i) {
                    d_k.v[i] = d_m.v[i] * ac.q.v[i];
                    d_q.v[i] = d_m.v[i] * ac.k.v[i];
                }

                Map3<T> d_f(ac.f_out.h, ac.f_out.w, half, T(0)), tmp;
                nn::conv2d_backward(ac.f_out, P.at(pa + ".k.kernel"), d_k, 3, rate, 1, tmp,
                                    dk, db);
                add_to(g, pa + ".k.kernel", dk);
                add_to(g, pa + ".k.bias", db);
                for (size_t i = 0; i < d_f.v.size(); ++i) d_f.v[i] += tmp.v[i];
                nn::conv2d_backward(ac.f_out, P.at(pa + ".q.kernel"), d_q, 3, rate, 1, tmp,
                                    dk, db);
                add_to(g, pa + ".q.kernel", dk);
                add_to(g, pa + ".q.bias", db);
                for (size_t i = 0; i < d_f.v.size(); ++i) d_f.v[i] += tmp.v[i];
                nn::conv2d_backward(ac.f_out, P.at(pa + ".v.kernel"), d_v, 3, rate, 1, tmp,
                                    dk, db);
                add_to(g, pa + ".v.kernel", dk);
                add_to(g, pa + ".v.bias", db);
                for (size_t i = 0; i < d_f.v.size(); ++i) d_f.v[i] += tmp.v[i];

                nn::conv2d_backward(bc.x_norm, P.at(pa + ".f.kernel"), d_f, 1, 1, 1, tmp,
                                    dk, db);
                add_to(g, pa + ".f.kernel", dk);
                add_to(g, pa + ".f.bias", db);
                for (size_t i = 0; i < d_xnorm.v.size(); ++i) d_xnorm.v[i] += tmp.v[i];
            }

            Map3<T> d_block_in;
            nn::layer_norm_backward(bc.ln_in, P.at(pb + ".ln_in.scale"), d_xnorm,
                                    d_block_in, ds, dh);
            add_to(g, pb + ".ln_in.scale", ds);
            add_to(g, pb + ".ln_in.shift", dh);
            d_x = std::move(d_block_in);
        }

        Map3<T> d_image;
        std::vector<T> dk, db;
        nn::conv2d_backward(cache.input, P.at("stem.kernel"), d_x, 3, 1, 2, d_image, dk, db);
        add_to(g, "stem.kernel", dk);
        add_to(g, "stem.bias", db);
        return g;
    }

  private:
    static void add_to(ParamStore<T>& g, const std::string& name, const std::vector<T>& d) {
        auto& t = g.tensors.at(name);
        for (size_t i = 0; i < t.size(); ++i) t[i] += d[i];
    }

    NetConfig cfg_;
};

// ---------------- gradient check ----------------

struct GradCheckReport {
    double max_rel_error = 0;
    int n_sampled = 0;
};

// Tiny double-precision config for gradient checking.
inline NetConfig gradcheck_config() {
    NetConfig cfg;
    cfg.stem_channels = 8;
    cfg.block_channels = {8};
    cfg.n_asa = {2};
    cfg.stride2_blocks = {};
    cfg.head_channels = 8;
    cfg.n_cls = 2;
    cfg.in_h = 12;
    cfg.in_w = 12;
    return cfg;
}

// Central finite differences of the full labeled training loss vs analytic
// gradients, in double precision.
inline GradCheckReport grad_check(const NetConfig& cfg, uint64_t seed,
                                  int n_samples = 200, double step = 1e-5) {
    Net<double> net(cfg);
    ParamStore<double> params = net.init_params(seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);

    // small scene with two instances, one pair near-crossing
    Scene scene;
    scene.height = cfg.in_h;
    scene.width = cfg.in_w;
    double cx = cfg.in_w / 2.0, cy = cfg.in_h / 2.0;
    Polygon p1{{{cx - 4, cy - 1.3}, {cx + 4, cy - 1.3}, {cx + 4, cy + 1.3}, {cx - 4, cy + 1.3}}};
    Polygon p2{{{cx - 1.2, cy - 4}, {cx + 1.2, cy - 4}, {cx + 1.2, cy + 4}, {cx - 1.2, cy + 4}}};
    scene.instances.push_back(Instance::from_polygon(1, p1, scene.height, scene.width));
    scene.instances.push_back(Instance::from_polygon(2, p2, scene.height, scene.width));
    TargetMapsT<double> gt = build_targets<double>(scene, cfg.n_cls);

    Map3<double> image(cfg.in_h, cfg.in_w, 3);
    std::uniform_real_distribution<double> pix(0.0, 1.0);
    for (auto& v : image.v) v = pix(rng);

    LossConfig lcfg;
    auto scalar_loss = [&](const ParamStore<double>& p) {
        HeadMaps<double> out = net.forward(image, p);
        return labeled_loss(gt, out, lcfg).total();
    };

    NetCache<double> cache;
    HeadMaps<double> out = net.forward(image, params, &cache);
    HeadMaps<double> d_out = labeled_loss_grad(gt, out, lcfg);
    ParamStore<double> analytic = net.backward(cache, params, d_out);

    // flatten name space for sampling
    std::vector<std::pair<std::string, size_t>> slots;
    for (const auto& [name, t] : params.tensors)
        for (size_t i = 0; i < t.size(); ++i) slots.push_back({name, i});

    GradCheckReport rep;
    std::uniform_int_distribution<size_t> pick(0, slots.size() - 1);
    for (int s = 0; s < n_samples; ++s) {
        auto [name, idx] = slots[pick(rng)];
        double orig = params.tensors[name][idx];
        params.tensors[name][idx] = orig + step;
        double fp = scalar_loss(params);
        params.tensors[name][idx] = orig - step;
        double fm = scalar_loss(params);
        params.tensors[name][idx] = orig;
        double numeric = (fp - fm) / (2 * step);
        double an = analytic.tensors[name][idx];
        double denom = std::max({std::abs(an), std::abs(numeric), 1e-8});
        rep.max_rel_error = std::max(rep.max_rel_error, std::abs(an - numeric) / denom);
        ++rep.n_sampled;
    }
    return rep;
}

}  // namespace a2bis

#endif  // A2BIS_NET_HPP_
