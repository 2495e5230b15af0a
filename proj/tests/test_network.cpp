#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "msfcn/network.hpp"
#include "test_helpers.hpp"

using namespace msfcn;

using Shape = std::vector<uint32_t>;

namespace {

// Independent parameter-count oracle: plain integer bookkeeping over the
// config, written without touching the network walk code.
size_t expected_params(const NetworkConfig& cfg) {
    const size_t kt = size_t(cfg.temporal_kernel());
    auto conv = [](size_t cout, size_t cin, size_t taps) { return cout * cin * taps + cout; };
    auto bn = [](size_t c) { return 2 * c; };

    size_t n = 0;
    size_t cin = size_t(cfg.in_channels);
    for (int i = 0; i < cfg.layers(); ++i) {
        const size_t c = size_t(cfg.channels[size_t(i)]);
        const size_t ck = size_t(cfg.mscb_ck(i));
        n += conv(ck, cin, kt * 9) + bn(ck);   // top_a
        n += conv(ck, ck, kt * 9) + bn(ck);    // top_b
        n += conv(ck, cin, kt * 9) + bn(ck);   // bottom
        n += conv(c, ck, 1) + bn(c);           // fuse
        cin = c;
    }
    const size_t cb = size_t(cfg.channels.back());
    n += 3 * conv(cb, cb, 1);  // gpm
    size_t ccur = cb;
    for (int k = cfg.layers() - 1; k >= 0; --k) {
        const size_t ci = size_t(cfg.channels[size_t(k)]);
        n += ccur * ci * 4 + ci;               // up (tconv 1x2x2)
        n += conv(ci, ci, kt * 9) + bn(ci);    // smooth
        const size_t cat = 2 * ci;
        const size_t mid = std::max<size_t>(1, cat / size_t(cfg.cab_reduction));
        n += conv(mid, cat, 1) + conv(cat, mid, 1) + conv(ci, cat, 1);  // cab
        ccur = ci;
    }
    const size_t c0 = size_t(cfg.channels[0]);
    n += conv(c0, c0, size_t(cfg.time_steps) * 9) + bn(c0);  // collapse
    n += conv(size_t(cfg.num_classes), c0, 1);               // classifier
    return n;
}

NetworkConfig small_cfg() {
    NetworkConfig cfg;
    cfg.in_channels = 3;
    cfg.time_steps = 1;
    cfg.num_classes = 4;
    cfg.channels = {4, 8};
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("config validation") {
    NetworkConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.channels = {8};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.channels = {8, 8, 8, 8, 8, 8};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.channels = {8, 0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = NetworkConfig{};
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = NetworkConfig{};
    cfg.time_steps = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = NetworkConfig{};
    CHECK(cfg.temporal_kernel() == 1);
    cfg.time_steps = 4;
    CHECK(cfg.temporal_kernel() == 3);
}

TEST_CASE("parameter count matches the closed-form oracle") {
    // 2D reference: 3 channels, single frame, 4 stages
    NetworkConfig c2d;
    c2d.in_channels = 3;
    c2d.time_steps = 1;
    c2d.num_classes = 6;
    c2d.channels = {32, 64, 128, 256};
    auto n2d = build_network<float>(c2d);
    const size_t got2d = count_params(n2d);
    CHECK(got2d == expected_params(c2d));
    CHECK(got2d == 2407078u);

    // 3D reference: 4 channels, 4 frames
    NetworkConfig c3d = c2d;
    c3d.in_channels = 4;
    c3d.time_steps = 4;
    auto n3d = build_network<float>(c3d);
    const size_t got3d = count_params(n3d);
    CHECK(got3d == expected_params(c3d));
    CHECK(got3d == 5169862u);

    // small config exercises the formula off the reference point
    NetworkConfig cs = small_cfg();
    auto ns = build_network<float>(cs);
    CHECK(count_params(ns) == expected_params(cs));
}

TEST_CASE("forward produces (b,K,h,w) logits for 2D and 3D inputs") {
    auto net = build_network<float>(small_cfg());
    Rng rng(3);
    Tensor x = tensor_zeros<float>({2, 3, 1, 32, 32});
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    Flow<float> y = net.forward(nullptr, x, Mode::eval);
    CHECK(y.v().shape == Shape{2, 4, 32, 32});
    for (float v : y.v().data) CHECK(std::isfinite(double(v)));

    NetworkConfig c3 = small_cfg();
    c3.in_channels = 2;
    c3.time_steps = 4;
    c3.num_classes = 3;
    auto net3 = build_network<float>(c3);
    Tensor x3 = tensor_zeros<float>({1, 2, 4, 16, 16});
    for (auto& v : x3.data) v = float(rng.uniform(-1, 1));
    Flow<float> y3 = net3.forward(nullptr, x3, Mode::eval);
    CHECK(y3.v().shape == Shape{1, 3, 16, 16});
}

TEST_CASE("forward validates rank, channels, time steps, and divisibility") {
    auto net = build_network<float>(small_cfg());
    CHECK_THROWS_AS(net.forward(nullptr, tensor_zeros<float>({3, 1, 32, 32}), Mode::eval),
                    ShapeError);
    check_throws_containing<ShapeError>(
        [&] { net.forward(nullptr, tensor_zeros<float>({1, 2, 1, 32, 32}), Mode::eval); },
        "channels");
    check_throws_containing<ShapeError>(
        [&] { net.forward(nullptr, tensor_zeros<float>({1, 3, 2, 32, 32}), Mode::eval); },
        "time steps");
    // L = 2 stages: extents must divide by 4
    check_throws_containing<ShapeError>(
        [&] { net.forward(nullptr, tensor_zeros<float>({1, 3, 1, 18, 32}), Mode::eval); },
        "divide");
}

TEST_CASE("eval forward is pure; train forward moves the BN running stats") {
    auto net = build_network<float>(small_cfg());
    Rng rng(5);
    Tensor x = tensor_zeros<float>({2, 3, 1, 16, 16});
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));

    std::vector<std::vector<float>> before;
    for (auto& b : net.buffers()) before.push_back(b.value->data);

    Flow<float> y1 = net.forward(nullptr, x, Mode::eval);
    Flow<float> y2 = net.forward(nullptr, x, Mode::eval);
    CHECK(y1.v().data == y2.v().data);
    {
        auto bufs = net.buffers();
        for (size_t i = 0; i < bufs.size(); ++i) CHECK(bufs[i].value->data == before[i]);
    }

    net.forward(nullptr, x, Mode::train);
    bool moved = false;
    auto bufs = net.buffers();
    for (size_t i = 0; i < bufs.size(); ++i)
        if (bufs[i].value->data != before[i]) moved = true;
    CHECK(moved);
}

TEST_CASE("parameter registry names follow the fixed walk") {
    auto net = build_network<float>(small_cfg());
    auto ps = net.params();
    REQUIRE(!ps.empty());
    CHECK(ps.front().name == "enc1.top_a.weight");
    CHECK(ps.back().name == "head.classifier.bias");
    auto has = [&](const std::string& n) {
        return std::any_of(ps.begin(), ps.end(),
                           [&](const auto& p) { return p.name == n; });
    };
    CHECK(has("enc2.fuse.bn.gamma"));
    CHECK(has("gpm.gate.weight"));
    CHECK(has("dec1.up.weight"));
    CHECK(has("dec2.cab.excite.bias"));
    CHECK(has("head.collapse.weight"));
    // L=2: 2*16 (mscb) + 6 (gpm) + 2*12 (dec) + 6 (head)
    CHECK(ps.size() == 68);

    auto bs = net.buffers();
    CHECK(bs.size() == 22);  // (2*4 + 2 + 1) BN layers, two buffers each
    CHECK(bs.front().name == "enc1.top_a.bn.running_mean");

    // every name unique
    std::vector<std::string> names;
    for (const auto& p : ps) names.push_back(p.name);
    for (const auto& b : bs) names.push_back(b.name);
    std::sort(names.begin(), names.end());
    CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
}

TEST_CASE("same seed builds identical networks, different seeds differ") {
    auto a = build_network<float>(small_cfg());
    auto b = build_network<float>(small_cfg());
    NetworkConfig other = small_cfg();
    other.seed = 8;
    auto c = build_network<float>(other);

    auto pa = a.params(), pb = b.params(), pc = c.params();
    bool all_equal = true, any_diff_c = false;
    for (size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].value->data != pb[i].value->data) all_equal = false;
        if (pa[i].value->data != pc[i].value->data) any_diff_c = true;
    }
    CHECK(all_equal);
    CHECK(any_diff_c);
}

TEST_CASE("checkpoint round trip restores every bit") {
    TempDir td("ckpt");
    auto net = build_network<float>(small_cfg());
    // move the net off its init point so the test is not trivial
    Rng rng(9);
    for (auto& p : net.params())
        for (auto& v : p.value->data) v += float(rng.uniform(-0.01, 0.01));
    for (auto& b : net.buffers())
        for (auto& v : b.value->data) v += float(rng.uniform(-0.01, 0.01));
    save_checkpoint(net, td.path / "ck");
    auto back = load_checkpoint<float>(td.path / "ck");

    auto pa = net.params(), pb = back.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].value->data == pb[i].value->data);
    }
    auto ba = net.buffers(), bb = back.buffers();
    for (size_t i = 0; i < ba.size(); ++i) CHECK(ba[i].value->data == bb[i].value->data);

    // identical forwards
    Tensor x = tensor_zeros<float>({1, 3, 1, 16, 16});
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    CHECK(net.forward(nullptr, x, Mode::eval).v().data ==
          back.forward(nullptr, x, Mode::eval).v().data);
}

TEST_CASE("corrupted checkpoints raise descriptive errors") {
    TempDir td("ckpt_bad");
    auto net = build_network<float>(small_cfg());
    const auto dir = td.path / "ck";

    SUBCASE("missing tensor file") {
        save_checkpoint(net, dir);
        std::filesystem::remove(dir / "gpm.gate.weight.tns");
        CHECK_THROWS_AS(load_checkpoint<float>(dir), std::exception);
    }
    SUBCASE("missing manifest entry") {
        save_checkpoint(net, dir);
        // rewrite the manifest without one line
        std::ifstream in(dir / "manifest.txt");
        std::vector<std::string> lines;
        std::string l;
        while (std::getline(in, l))
            if (l.find("gpm.gate.weight") == std::string::npos) lines.push_back(l);
        in.close();
        std::ofstream out(dir / "manifest.txt", std::ios::trunc);
        for (const auto& s : lines) out << s << "\n";
        out.close();
        check_throws_containing<CheckpointError>([&] { load_checkpoint<float>(dir); },
                                                 "missing");
    }
    SUBCASE("wrong tensor shape") {
        save_checkpoint(net, dir);
        save_tensor(tensor_zeros<float>({3, 3}), dir / "gpm.gate.weight.tns");
        check_throws_containing<CheckpointError>([&] { load_checkpoint<float>(dir); }, "shape");
    }
    SUBCASE("unexpected extra entry") {
        save_checkpoint(net, dir);
        save_tensor(tensor_zeros<float>({1}), dir / "stray.tns");
        std::ofstream mf(dir / "manifest.txt", std::ios::app);
        mf << "stray\tstray.tns\t(1)\n";
        mf.close();
        check_throws_containing<CheckpointError>([&] { load_checkpoint<float>(dir); },
                                                 "unexpected");
    }
    SUBCASE("no config") {
        CHECK_THROWS_AS(load_checkpoint<float>(td.path / "nowhere"), CheckpointError);
    }
}

TEST_CASE("config kv round trip") {
    NetworkConfig cfg;
    cfg.in_channels = 4;
    cfg.time_steps = 7;
    cfg.num_classes = 9;
    cfg.channels = {8, 16, 32};
    cfg.mscb_ck_div = 4;
    cfg.cab_reduction = 8;
    cfg.seed = 123456789ull;
    NetworkConfig back = network_config_from_kv(config_kv(cfg));
    CHECK(back.in_channels == cfg.in_channels);
    CHECK(back.time_steps == cfg.time_steps);
    CHECK(back.num_classes == cfg.num_classes);
    CHECK(back.channels == cfg.channels);
    CHECK(back.mscb_ck_div == cfg.mscb_ck_div);
    CHECK(back.cab_reduction == cfg.cab_reduction);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("cost table: frozen hand value, plausible total, 3D dominates 2D") {
    NetworkConfig c2d;
    c2d.in_channels = 3;
    c2d.time_steps = 1;
    c2d.num_classes = 6;
    c2d.channels = {32, 64, 128, 256};
    auto rows = network_costs(c2d, 256, 256);
    // enc1.top_a: ck=16 filters x 3 input channels x 9 taps x 256*256 outputs
    bool found = false;
    for (const auto& r : rows)
        if (r.layer == "enc1.top_a") {
            found = true;
            CHECK(r.macs == 16ull * 3 * 9 * 65536);
        }
    CHECK(found);

    const unsigned long long t2d = total_macs(c2d, 256, 256);
    CHECK(t2d > 2000000000ull);   // order-of-magnitude window
    CHECK(t2d < 20000000000ull);

    NetworkConfig c3d = c2d;
    c3d.in_channels = 4;
    c3d.time_steps = 4;
    CHECK(total_macs(c3d, 256, 256) > 4 * t2d / 2);

    CHECK_THROWS_AS(network_costs(c2d, 100, 256), ConfigError);
}

}  // TEST_SUITE
