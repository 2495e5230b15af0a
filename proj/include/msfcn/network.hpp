#pragma once

#include <filesystem>
#include <fstream>
#include <map>

#include "msfcn/blocks.hpp"
#include "msfcn/tns_io.hpp"

namespace msfcn {

// Encoder widths double per stage in the reference configs; `channels` is the
// per-stage MSCB output width and its length is the pyramid depth (2..5).
// mscb_ck_div sets the MSCB internal branch width to cout/div — 2 keeps the
// parameter count near the reference model sizes.
struct NetworkConfig {
    int in_channels = 3;
    int time_steps = 1;
    int num_classes = 6;
    std::vector<int> channels = {32, 64, 128, 256};
    int mscb_ck_div = 2;
    int cab_reduction = 4;
    uint64_t seed = 1;

    int layers() const { return int(channels.size()); }
    int temporal_kernel() const { return time_steps > 1 ? 3 : 1; }

    void validate() const {
        if (channels.size() < 2 || channels.size() > 5)
            throw ConfigError("net.channels must list 2..5 stage widths, got " +
                              std::to_string(channels.size()));
        for (int c : channels)
            if (c < 1) throw ConfigError("net.channels entries must be >= 1");
        if (in_channels < 1) throw ConfigError("net.in_channels must be >= 1");
        if (time_steps < 1) throw ConfigError("net.time_steps must be >= 1");
        if (num_classes < 2 || num_classes >= int(kIgnoreLabel))
            throw ConfigError("net.num_classes must be in [2,65535)");
        if (mscb_ck_div < 1) throw ConfigError("net.mscb_ck_div must be >= 1");
        if (cab_reduction < 1) throw ConfigError("net.cab_reduction must be >= 1");
    }

    int mscb_ck(int stage) const { return std::max(1, channels[size_t(stage)] / mscb_ck_div); }
};

template <typename T>
struct NetworkT {
    NetworkConfig cfg;

    std::vector<MscbT<T>> enc;  // one per stage, shallow -> deep
    GpmT<T> gpm;
    struct DecStage {
        ConvLayerT<T> up;      // transposed conv (1,2,2)/(1,2,2)
        ConvBnActT<T> smooth;  // 3x3 conv cleaning upsampling artifacts
        CabT<T> cab;
    };
    std::vector<DecStage> dec;  // executed deep -> shallow; dec[k] pairs with enc[L-1-k]
    ConvBnActT<T> collapse;     // (t,3,3): folds the time axis to 1
    ConvLayerT<T> classifier;   // 1x1x1 -> num_classes, raw logits

    struct ParamRef {
        std::string name;
        TensorT<T>* value;
        TensorT<T>* grad;
    };
    struct BufferRef {
        std::string name;
        TensorT<T>* value;
    };

    // Fixed walk order — init, Adam, and checkpoints all follow it.
    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        auto conv = [&out](const std::string& n, ConvLayerT<T>& l) {
            out.push_back({n + ".weight", &l.p.weight, &l.gweight});
            out.push_back({n + ".bias", &l.p.bias, &l.gbias});
        };
        auto cba = [&out, &conv](const std::string& n, ConvBnActT<T>& l) {
            conv(n, l.conv);
            if (l.has_bn) {
                out.push_back({n + ".bn.gamma", &l.bn.p.gamma, &l.bn.ggamma});
                out.push_back({n + ".bn.beta", &l.bn.p.beta, &l.bn.gbeta});
            }
        };
        for (size_t i = 0; i < enc.size(); ++i) {
            const std::string p = "enc" + std::to_string(i + 1);
            cba(p + ".top_a", enc[i].top_a);
            cba(p + ".top_b", enc[i].top_b);
            cba(p + ".bottom", enc[i].bottom);
            cba(p + ".fuse", enc[i].fuse);
        }
        conv("gpm.in", gpm.in_conv);
        conv("gpm.gate", gpm.gate);
        conv("gpm.out", gpm.out_conv);
        for (size_t k = 0; k < dec.size(); ++k) {
            const std::string p = "dec" + std::to_string(k + 1);
            conv(p + ".up", dec[k].up);
            cba(p + ".smooth", dec[k].smooth);
            conv(p + ".cab.squeeze", dec[k].cab.squeeze);
            conv(p + ".cab.excite", dec[k].cab.excite);
            conv(p + ".cab.out", dec[k].cab.out);
        }
        cba("head.collapse", collapse);
        conv("head.classifier", classifier);
        return out;
    }

    std::vector<BufferRef> buffers() {
        std::vector<BufferRef> out;
        auto bn = [&out](const std::string& n, BnLayerT<T>& l) {
            out.push_back({n + ".bn.running_mean", &l.p.running_mean});
            out.push_back({n + ".bn.running_var", &l.p.running_var});
        };
        for (size_t i = 0; i < enc.size(); ++i) {
            const std::string p = "enc" + std::to_string(i + 1);
            bn(p + ".top_a", enc[i].top_a.bn);
            bn(p + ".top_b", enc[i].top_b.bn);
            bn(p + ".bottom", enc[i].bottom.bn);
            bn(p + ".fuse", enc[i].fuse.bn);
        }
        for (size_t k = 0; k < dec.size(); ++k)
            bn("dec" + std::to_string(k + 1) + ".smooth", dec[k].smooth.bn);
        bn("head.collapse", collapse.bn);
        return out;
    }

    // batch: (b,c,t,h,w). Returns (b,K,h,w) logits.
    Flow<T> forward(TapeT<T>* tape, const TensorT<T>& batch, Mode mode) {
        if (batch.rank() != 5) throw ShapeError("network forward: expected (b,c,t,h,w)");
        if (int(batch.shape[1]) != cfg.in_channels)
            throw ShapeError("network forward: input has " + std::to_string(batch.shape[1]) +
                             " channels, config expects " + std::to_string(cfg.in_channels));
        if (int(batch.shape[2]) != cfg.time_steps)
            throw ShapeError("network forward: input has " + std::to_string(batch.shape[2]) +
                             " time steps, config expects " + std::to_string(cfg.time_steps));
        const uint32_t h = batch.shape[3], w = batch.shape[4];
        const uint32_t div = 1u << cfg.layers();
        if (h % div != 0 || w % div != 0)
            throw ShapeError("network forward: spatial extents " + std::to_string(h) + "x" +
                             std::to_string(w) + " must divide by 2^layers = " +
                             std::to_string(div));

        Flow<T> x = make_flow(batch);
        std::vector<Flow<T>> skips;
        for (size_t i = 0; i < enc.size(); ++i) {
            x = enc[i].forward(tape, x, mode);
            skips.push_back(x);
            x = maxpool_flow(tape, x);
        }
        x = gpm.forward(tape, x, mode);
        for (size_t k = 0; k < dec.size(); ++k) {
            const size_t i = enc.size() - 1 - k;
            x = conv_flow(tape, x, dec[k].up);
            x = dec[k].smooth.forward(tape, x, mode);
            x = dec[k].cab.forward(tape, skips[i], x, mode);
        }
        x = collapse.forward(tape, x, mode);
        x = conv_flow(tape, x, classifier);
        const auto& s = x.v().shape;  // (b,K,1,h,w)
        return reshape_flow(tape, x, {s[0], s[1], s[3], s[4]});
    }
};
using Network = NetworkT<float>;

template <typename T>
NetworkT<T> build_network(const NetworkConfig& cfg) {
    cfg.validate();
    NetworkT<T> net;
    net.cfg = cfg;
    Rng rng(cfg.seed);
    const int kt = cfg.temporal_kernel();
    const int L = cfg.layers();

    int cin = cfg.in_channels;
    for (int i = 0; i < L; ++i) {
        net.enc.push_back(make_mscb<T>(rng, cin, cfg.channels[size_t(i)], cfg.mscb_ck(i), kt));
        cin = cfg.channels[size_t(i)];
    }
    net.gpm = make_gpm<T>(rng, cfg.channels.back());

    int ccur = cfg.channels.back();
    for (int k = 0; k < L; ++k) {
        const int i = L - 1 - k;
        const int ci = cfg.channels[size_t(i)];
        typename NetworkT<T>::DecStage d;
        d.up = make_conv_layer<T>(rng, true, ccur, ci, 1, 2, 2, 1, 2, 2, 0, 0, 0);
        d.smooth = make_conv_bn_act<T>(rng, ci, ci, kt, 3, 3);
        d.cab = make_cab<T>(rng, ci, cfg.cab_reduction);
        net.dec.push_back(std::move(d));
        ccur = ci;
    }

    // Head: a (t,3,3) valid-in-time conv collapses the time axis, then the
    // 1x1x1 classifier produces per-class score maps.
    net.collapse.conv = make_conv_layer<T>(rng, false, cfg.channels[0], cfg.channels[0],
                                           cfg.time_steps, 3, 3, 1, 1, 1, 0, 1, 1);
    net.collapse.bn = make_bn_layer<T>(uint32_t(cfg.channels[0]));
    net.classifier = make_conv1x1<T>(rng, cfg.channels[0], cfg.num_classes);
    return net;
}

template <typename T>
size_t count_params(NetworkT<T>& net) {
    size_t n = 0;
    for (const auto& p : net.params()) n += p.value->size();
    return n;
}

// --- cost accounting ----------------------------------------------------------

// One row per conv/tconv. MACs count kernel multiplies only (one multiply-add
// per weight tap per output element; bias, BN, activations and pooling are
// excluded). Derived from the config alone, no network instance needed.
struct CostRow {
    std::string layer;
    unsigned long long macs = 0;
};

inline std::vector<CostRow> network_costs(const NetworkConfig& cfg, int h, int w) {
    cfg.validate();
    const uint32_t div = 1u << cfg.layers();
    if (h % int(div) != 0 || w % int(div) != 0)
        throw ConfigError("cost accounting: extents must divide by 2^layers");
    std::vector<CostRow> rows;
    const int kt = cfg.temporal_kernel();
    const int t = cfg.time_steps;
    auto conv_macs = [](long long cout, long long cin, long long k, long long out_elems) {
        return (unsigned long long)(cout * cin * k * out_elems);
    };

    const int L = cfg.layers();
    int cin = cfg.in_channels;
    long long hh = h, ww = w;
    for (int i = 0; i < L; ++i) {
        const long long c = cfg.channels[size_t(i)], ck = cfg.mscb_ck(i);
        const long long el = (long long)t * hh * ww;
        const std::string p = "enc" + std::to_string(i + 1);
        rows.push_back({p + ".top_a", conv_macs(ck, cin, kt * 9, el)});
        rows.push_back({p + ".top_b", conv_macs(ck, ck, kt * 9, el)});
        rows.push_back({p + ".bottom", conv_macs(ck, cin, kt * 9, el)});
        rows.push_back({p + ".fuse", conv_macs(c, ck, 1, el)});
        cin = int(c);
        hh /= 2;
        ww /= 2;
    }
    {
        const long long c = cfg.channels.back();
        const long long el = (long long)t * hh * ww;
        rows.push_back({"gpm.in", conv_macs(c, c, 1, el)});
        rows.push_back({"gpm.gate", conv_macs(c, c, 1, 1)});
        rows.push_back({"gpm.out", conv_macs(c, c, 1, el)});
    }
    long long ccur = cfg.channels.back();
    for (int k = 0; k < L; ++k) {
        const int i = L - 1 - k;
        const long long ci = cfg.channels[size_t(i)];
        const long long in_el = (long long)t * hh * ww;
        hh *= 2;
        ww *= 2;
        const long long out_el = (long long)t * hh * ww;
        const std::string p = "dec" + std::to_string(k + 1);
        // tconv: every input element feeds cout * k taps
        rows.push_back({p + ".up", conv_macs(ci, ccur, 4, in_el)});
        rows.push_back({p + ".smooth", conv_macs(ci, ci, kt * 9, out_el)});
        const long long cat = 2 * ci, mid = std::max(1ll, cat / cfg.cab_reduction);
        rows.push_back({p + ".cab.squeeze", conv_macs(mid, cat, 1, 1)});
        rows.push_back({p + ".cab.excite", conv_macs(cat, mid, 1, 1)});
        rows.push_back({p + ".cab.out", conv_macs(ci, cat, 1, out_el)});
        ccur = ci;
    }
    rows.push_back({"head.collapse",
                    conv_macs(cfg.channels[0], cfg.channels[0], (long long)t * 9, (long long)h * w)});
    rows.push_back({"head.classifier",
                    conv_macs(cfg.num_classes, cfg.channels[0], 1, (long long)h * w)});
    return rows;
}

inline unsigned long long total_macs(const NetworkConfig& cfg, int h, int w) {
    unsigned long long s = 0;
    for (const auto& r : network_costs(cfg, h, w)) s += r.macs;
    return s;
}

// --- checkpoints ----------------------------------------------------------------

// Layout: <dir>/config.txt (flat key=value), <dir>/manifest.txt
// (name<TAB>file<TAB>shape per line), one .tns per tensor.

inline std::map<std::string, std::string> config_kv(const NetworkConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["net.in_channels"] = std::to_string(cfg.in_channels);
    kv["net.time_steps"] = std::to_string(cfg.time_steps);
    kv["net.num_classes"] = std::to_string(cfg.num_classes);
    std::string ch;
    for (size_t i = 0; i < cfg.channels.size(); ++i)
        ch += (i ? "," : "") + std::to_string(cfg.channels[i]);
    kv["net.channels"] = ch;
    kv["net.mscb_ck_div"] = std::to_string(cfg.mscb_ck_div);
    kv["net.cab_reduction"] = std::to_string(cfg.cab_reduction);
    kv["seed"] = std::to_string(cfg.seed);
    return kv;
}

NetworkConfig network_config_from_kv(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path);
void write_kv_file(const std::map<std::string, std::string>& kv, const std::filesystem::path& path);

template <typename T>
void save_checkpoint(NetworkT<T>& net, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_kv_file(config_kv(net.cfg), dir / "config.txt");
    std::ofstream mf(dir / "manifest.txt", std::ios::trunc);
    if (!mf) throw CheckpointError("cannot write " + (dir / "manifest.txt").string());
    auto dump = [&](const std::string& name, const TensorT<T>& v) {
        const std::string file = name + ".tns";
        save_tensor(tensor_cast<float>(v), dir / file);
        mf << name << "\t" << file << "\t" << shape_str(v.shape) << "\n";
    };
    for (const auto& p : net.params()) dump(p.name, *p.value);
    for (const auto& b : net.buffers()) dump(b.name, *b.value);
}

template <typename T>
NetworkT<T> load_checkpoint(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / "config.txt"))
        throw CheckpointError("checkpoint has no config.txt: " + dir.string());
    NetworkConfig cfg = network_config_from_kv(parse_kv_file(dir / "config.txt"));
    NetworkT<T> net = build_network<T>(cfg);

    std::ifstream mf(dir / "manifest.txt");
    if (!mf) throw CheckpointError("checkpoint has no manifest.txt: " + dir.string());
    std::map<std::string, std::string> files;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw CheckpointError("malformed manifest line: " + line);
        files[line.substr(0, t1)] = line.substr(t1 + 1, t2 - t1 - 1);
    }
    auto restore = [&](const std::string& name, TensorT<T>& dst) {
        auto it = files.find(name);
        if (it == files.end()) throw CheckpointError("checkpoint missing tensor: " + name);
        Tensor f = load_tensor(dir / it->second);
        if (f.shape != dst.shape)
            throw CheckpointError("checkpoint tensor " + name + " has shape " +
                                  shape_str(f.shape) + ", config requires " +
                                  shape_str(dst.shape));
        dst = tensor_cast<T>(f);
        files.erase(it);
    };
    for (const auto& p : net.params()) restore(p.name, *p.value);
    for (const auto& b : net.buffers()) restore(b.name, *b.value);
    if (!files.empty())
        throw CheckpointError("checkpoint has unexpected entry: " + files.begin()->first);
    return net;
}

}  // namespace msfcn
