#include <omp.h>

#include <cstring>
#include <vector>

#include "doctest.h"
#include "msfcn/kernels.hpp"
#include "test_helpers.hpp"

using namespace msfcn;

namespace {

template <typename T>
std::vector<T> rand_vec(size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(n);
    for (auto& x : v) x = T(rng.uniform(lo, hi));
    return v;
}

template <typename T>
double dotv(const std::vector<T>& a, const std::vector<T>& b) {
    REQUIRE(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

template <typename T>
double max_diff(const std::vector<T>& a, const std::vector<T>& b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("output extent formula") {
    CHECK(conv_out_extent(5, 3, 1, 1, "h") == 5);   // same-pad
    CHECK(conv_out_extent(8, 3, 2, 1, "h") == 4);   // floor((8+2-3)/2)+1
    CHECK(conv_out_extent(7, 3, 2, 1, "h") == 4);   // floor truncation
    CHECK(conv_out_extent(4, 1, 1, 0, "h") == 4);
    CHECK(conv_out_extent(2, 2, 2, 0, "h") == 1);
    CHECK_THROWS_AS(conv_out_extent(2, 5, 1, 1, "h"), ShapeError);
}

TEST_CASE("tconv output extents") {
    ConvGeom g = make_tconv_geom(1, 2, 3, 4, 5, 3, 1, 2, 2, 1, 2, 2, 0, 0, 0);
    CHECK(g.to == 3);
    CHECK(g.ho == 8);   // (4-1)*2 + 2
    CHECK(g.wo == 10);  // (5-1)*2 + 2
    ConvGeom h = make_tconv_geom(1, 2, 2, 3, 3, 2, 3, 3, 3, 1, 1, 1, 1, 1, 1);
    CHECK(h.to == 2);   // (2-1)*1 - 2 + 3
    CHECK(h.ho == 3);
    CHECK_THROWS_AS(make_tconv_geom(1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0), ShapeError);
}

TEST_CASE("geometry argument validation") {
    CHECK_THROWS_AS(make_conv_geom(1, 0, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0), ShapeError);
    CHECK_THROWS_AS(make_conv_geom(1, 1, 2, 2, 2, 1, 1, 1, 1, 0, 1, 1, 0, 0, 0), ShapeError);
    CHECK_THROWS_AS(make_conv_geom(1, 1, 2, 2, 2, 1, 1, 1, 1, 1, 1, 1, -1, 0, 0), ShapeError);
}

TEST_CASE("all-ones 3x3x3 conv counts valid taps: 27 in the interior, 8 at corners") {
    // Independent oracle: for each output position, count kernel taps that land
    // in bounds. With unit weights and unit input the conv must equal the count.
    const int t = 3, h = 5, w = 5;
    ConvGeom g = make_conv_geom(1, 1, t, h, w, 1, 3, 3, 3, 1, 1, 1, 1, 1, 1);
    std::vector<float> x(size_t(t) * h * w, 1.0f), wt(27, 1.0f), y(g.out_plane());
    kern::conv3d_fwd<float>(x.data(), wt.data(), nullptr, y.data(), g);

    auto count_taps = [&](int to, int ho, int wo) {
        int64_t c = 0;
        for (int p = 0; p < 3; ++p)
            for (int q = 0; q < 3; ++q)
                for (int r = 0; r < 3; ++r) {
                    const int ti = to - 1 + p, hi = ho - 1 + q, wi = wo - 1 + r;
                    if (ti >= 0 && ti < t && hi >= 0 && hi < h && wi >= 0 && wi < w) ++c;
                }
        return c;
    };
    CHECK(y[(size_t(1) * 5 + 2) * 5 + 2] == 27.0f);  // interior
    CHECK(y[0] == 8.0f);                             // corner (0,0,0)
    for (int to = 0; to < g.to; ++to)
        for (int ho = 0; ho < g.ho; ++ho)
            for (int wo = 0; wo < g.wo; ++wo)
                CHECK(y[(size_t(to) * g.ho + ho) * g.wo + wo] == float(count_taps(to, ho, wo)));
}

TEST_CASE("1x1x1 unit conv is identity plus bias") {
    Rng rng(5);
    ConvGeom g = make_conv_geom(2, 1, 2, 3, 4, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0);
    auto x = rand_vec<float>(2 * g.in_plane(), rng);
    std::vector<float> wt = {1.0f}, bias = {0.25f}, y(2 * g.out_plane());
    kern::conv3d_fwd(x.data(), wt.data(), bias.data(), y.data(), g);
    for (size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i] + 0.25f);
}

TEST_CASE("fast conv matches the reference on assorted geometries") {
    Rng rng(17);
    const ConvGeom geoms[] = {
        make_conv_geom(2, 3, 4, 7, 9, 4, 3, 3, 3, 1, 1, 1, 1, 1, 1),
        make_conv_geom(1, 2, 1, 8, 8, 3, 1, 3, 3, 1, 2, 2, 0, 1, 1),
        make_conv_geom(2, 4, 5, 6, 5, 2, 3, 2, 3, 2, 2, 1, 1, 0, 2),
        make_conv_geom(1, 5, 2, 3, 4, 7, 1, 1, 1, 1, 1, 1, 0, 0, 0),
    };
    for (const auto& g : geoms) {
        const size_t xn = size_t(g.b) * g.cin * g.in_plane();
        const size_t wn = size_t(g.cout) * g.cin * g.ksize();
        const size_t yn = size_t(g.b) * g.cout * g.out_plane();
        auto xd = rand_vec<double>(xn, rng);
        auto wd = rand_vec<double>(wn, rng);
        auto bd = rand_vec<double>(size_t(g.cout), rng);
        std::vector<double> yf(yn), yr(yn);
        kern::conv3d_fwd(xd.data(), wd.data(), bd.data(), yf.data(), g);
        ref::conv3d_fwd(xd.data(), wd.data(), bd.data(), yr.data(), g);
        CHECK(max_diff(yf, yr) < 1e-12);

        // float run stays within accumulation noise of the double reference
        std::vector<float> xf(xn), wf(wn), bf(g.cout), yff(yn);
        for (size_t i = 0; i < xn; ++i) xf[i] = float(xd[i]);
        for (size_t i = 0; i < wn; ++i) wf[i] = float(wd[i]);
        for (int i = 0; i < g.cout; ++i) bf[i] = float(bd[i]);
        kern::conv3d_fwd(xf.data(), wf.data(), bf.data(), yff.data(), g);
        double md = 0.0;
        for (size_t i = 0; i < yn; ++i) md = std::max(md, std::abs(double(yff[i]) - yr[i]));
        CHECK(md < 1e-4);
    }
}

TEST_CASE("fast tconv matches the scatter-form reference") {
    Rng rng(23);
    const ConvGeom geoms[] = {
        make_tconv_geom(2, 3, 3, 4, 5, 2, 1, 2, 2, 1, 2, 2, 0, 0, 0),
        make_tconv_geom(1, 2, 2, 3, 3, 3, 3, 3, 3, 1, 1, 1, 1, 1, 1),
        make_tconv_geom(1, 2, 2, 3, 4, 2, 2, 3, 3, 2, 2, 2, 0, 1, 1),
    };
    for (const auto& g : geoms) {
        const size_t xn = size_t(g.b) * g.cin * g.in_plane();
        const size_t wn = size_t(g.cin) * g.cout * g.ksize();
        const size_t yn = size_t(g.b) * g.cout * g.out_plane();
        auto xd = rand_vec<double>(xn, rng);
        auto wd = rand_vec<double>(wn, rng);
        auto bd = rand_vec<double>(size_t(g.cout), rng);
        std::vector<double> yf(yn), yr(yn);
        kern::tconv3d_fwd(xd.data(), wd.data(), bd.data(), yf.data(), g);
        ref::tconv3d_fwd(xd.data(), wd.data(), bd.data(), yr.data(), g);
        CHECK(max_diff(yf, yr) < 1e-12);
    }
}

TEST_CASE("transposed conv is the adjoint of conv with the shared weight buffer") {
    // <conv(x; W), u> == <x, tconv(u; W)> when the geometry round-trips exactly.
    Rng rng(31);
    const int cin = 3, cout = 2, hw = 9;
    ConvGeom gc = make_conv_geom(2, cin, 1, hw, hw, cout, 1, 3, 3, 1, 2, 2, 0, 1, 1);
    REQUIRE(gc.ho == 5);
    ConvGeom gt = make_tconv_geom(2, cout, 1, gc.ho, gc.wo, cin, 1, 3, 3, 1, 2, 2, 0, 1, 1);
    REQUIRE(gt.ho == hw);

    const size_t xn = size_t(gc.b) * cin * gc.in_plane();
    const size_t un = size_t(gc.b) * cout * gc.out_plane();
    auto x = rand_vec<double>(xn, rng);
    auto w = rand_vec<double>(size_t(cout) * cin * gc.ksize(), rng);
    auto u = rand_vec<double>(un, rng);
    std::vector<double> y(un), xt(xn);
    kern::conv3d_fwd<double>(x.data(), w.data(), nullptr, y.data(), gc);
    kern::tconv3d_fwd<double>(u.data(), w.data(), nullptr, xt.data(), gt);
    const double lhs = dotv(y, u), rhs = dotv(x, xt);
    CHECK(std::abs(lhs - rhs) < 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST_CASE("conv backward kernels satisfy the defining adjoint identities") {
    Rng rng(41);
    ConvGeom g = make_conv_geom(2, 3, 4, 6, 7, 2, 3, 2, 3, 2, 1, 2, 1, 1, 0);
    const size_t xn = size_t(g.b) * g.cin * g.in_plane();
    const size_t wn = size_t(g.cout) * g.cin * g.ksize();
    const size_t yn = size_t(g.b) * g.cout * g.out_plane();
    auto x = rand_vec<double>(xn, rng);
    auto w = rand_vec<double>(wn, rng);
    auto gy = rand_vec<double>(yn, rng);
    std::vector<double> y(yn), dx(xn), dw(wn), db(size_t(g.cout));
    kern::conv3d_fwd<double>(x.data(), w.data(), nullptr, y.data(), g);
    kern::conv3d_bwd_x(w.data(), gy.data(), dx.data(), g);
    kern::conv3d_bwd_wgt(x.data(), gy.data(), dw.data(), g);
    kern::conv3d_bwd_bias(gy.data(), db.data(), g.b, g.cout, g.out_plane());

    // conv is linear in x and in W separately, so <conv(x;W), gy> equals both
    // <x, bwd_x(gy;W)> and <W, bwd_wgt(x,gy)>.
    const double ref_dot = dotv(y, gy);
    CHECK(std::abs(dotv(x, dx) - ref_dot) < 1e-10 * std::max(1.0, std::abs(ref_dot)));
    CHECK(std::abs(dotv(w, dw) - ref_dot) < 1e-10 * std::max(1.0, std::abs(ref_dot)));

    // bias gradient: independent per-channel sum
    for (int j = 0; j < g.cout; ++j) {
        double s = 0.0;
        for (int n = 0; n < g.b; ++n) {
            const double* gj = gy.data() + (size_t(n) * g.cout + j) * g.out_plane();
            for (size_t i = 0; i < g.out_plane(); ++i) s += gj[i];
        }
        CHECK(std::abs(db[j] - s) < 1e-12);
    }
}

TEST_CASE("tconv weight gradient satisfies its adjoint identity") {
    Rng rng(43);
    ConvGeom g = make_tconv_geom(2, 3, 2, 3, 4, 2, 2, 3, 3, 2, 2, 2, 0, 1, 1);
    const size_t xn = size_t(g.b) * g.cin * g.in_plane();
    const size_t wn = size_t(g.cin) * g.cout * g.ksize();
    const size_t yn = size_t(g.b) * g.cout * g.out_plane();
    auto x = rand_vec<double>(xn, rng);
    auto w = rand_vec<double>(wn, rng);
    auto gy = rand_vec<double>(yn, rng);
    std::vector<double> y(yn), dw(wn);
    kern::tconv3d_fwd<double>(x.data(), w.data(), nullptr, y.data(), g);
    kern::tconv3d_bwd_wgt(x.data(), gy.data(), dw.data(), g);
    const double ref_dot = dotv(y, gy);
    CHECK(std::abs(dotv(w, dw) - ref_dot) < 1e-10 * std::max(1.0, std::abs(ref_dot)));
}

TEST_CASE("repeated runs and thread-count changes give bit-identical conv output") {
    Rng rng(53);
    ConvGeom g = make_conv_geom(2, 3, 2, 8, 10, 4, 1, 3, 3, 1, 1, 1, 0, 1, 1);
    const size_t xn = size_t(g.b) * g.cin * g.in_plane();
    const size_t wn = size_t(g.cout) * g.cin * g.ksize();
    const size_t yn = size_t(g.b) * g.cout * g.out_plane();
    auto x = rand_vec<float>(xn, rng);
    auto w = rand_vec<float>(wn, rng);
    auto b = rand_vec<float>(size_t(g.cout), rng);

    const int max_threads = omp_get_max_threads();
    std::vector<float> y1(yn), y2(yn);
    kern::conv3d_fwd(x.data(), w.data(), b.data(), y1.data(), g);
    for (int nt : {1, 2, 4}) {
        omp_set_num_threads(nt);
        kern::conv3d_fwd(x.data(), w.data(), b.data(), y2.data(), g);
        CHECK(std::memcmp(y1.data(), y2.data(), yn * sizeof(float)) == 0);
    }
    omp_set_num_threads(max_threads);
}

TEST_CASE("maxpool 1x2x2: hand case, tie-break, and gradient routing") {
    // one channel, t=1, 4x4 ramp
    std::vector<float> x(16);
    for (int i = 0; i < 16; ++i) x[i] = float(i);
    std::vector<float> y(4);
    std::vector<uint32_t> am(4);
    kern::maxpool122_fwd(x.data(), y.data(), am.data(), 1, 1, 4, 4);
    CHECK(y == std::vector<float>{5, 7, 13, 15});
    CHECK(am == std::vector<uint32_t>{5, 7, 13, 15});

    // all-equal input: ties go to the first scanned (top-left) element
    std::vector<float> xe(16, 2.5f);
    kern::maxpool122_fwd(xe.data(), y.data(), am.data(), 1, 1, 4, 4);
    CHECK(am == std::vector<uint32_t>{0, 2, 8, 10});
    CHECK(y == std::vector<float>{2.5f, 2.5f, 2.5f, 2.5f});

    // gradient lands exactly on the winners
    std::vector<float> gy = {1, 2, 3, 4}, dx(16);
    kern::maxpool122_fwd(x.data(), y.data(), am.data(), 1, 1, 4, 4);
    kern::maxpool122_bwd(gy.data(), am.data(), dx.data(), 1, 1, 4, 4);
    std::vector<float> want(16, 0.0f);
    want[5] = 1;
    want[7] = 2;
    want[13] = 3;
    want[15] = 4;
    CHECK(dx == want);
}

TEST_CASE("maxpool treats the t axis as batch-like") {
    // t=2: pooling never crosses time planes
    std::vector<float> x(2 * 2 * 2);
    // t=0 plane: {1,2,3,4}; t=1 plane: {40,30,20,10}
    x = {1, 2, 3, 4, 40, 30, 20, 10};
    std::vector<float> y(2);
    std::vector<uint32_t> am(2);
    kern::maxpool122_fwd(x.data(), y.data(), am.data(), 1, 2, 2, 2);
    CHECK(y == std::vector<float>{4, 40});
    CHECK(am == std::vector<uint32_t>{3, 4});
}

TEST_CASE("conv_axis_range brackets exactly the valid indices") {
    // brute-force cross-check over a grid of offsets/strides/extents
    for (int in = 1; in <= 6; ++in)
        for (int out = 1; out <= 6; ++out)
            for (int s = 1; s <= 3; ++s)
                for (int off = -4; off <= 4; ++off) {
                    int lo, hi;
                    conv_axis_range(off, s, in, out, lo, hi);
                    for (int v = 0; v < out; ++v) {
                        const bool valid = v * s + off >= 0 && v * s + off < in;
                        const bool inside = v >= lo && v < hi;
                        CHECK(valid == inside);
                    }
                }
}

}  // TEST_SUITE
