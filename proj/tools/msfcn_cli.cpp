// Command-line front end: synthetic data, tiling, splits, training,
// evaluation, prediction, gradient checking, and model summaries.

#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "msfcn/config.hpp"
#include "msfcn/data_io.hpp"
#include "msfcn/gradcheck.hpp"
#include "msfcn/metrics.hpp"
#include "msfcn/tns_io.hpp"
#include "msfcn/training.hpp"

namespace {

using namespace msfcn;

void apply_thread_cap() {
    if (const char* env = std::getenv("MSFCN_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) omp_set_num_threads(n);
    }
}

NetworkConfig preset_or_file(const std::string& name) {
    if (name == "2d_default") {
        NetworkConfig cfg;
        cfg.in_channels = 3;
        cfg.time_steps = 1;
        cfg.num_classes = 6;
        cfg.channels = {32, 64, 128, 256};
        return cfg;
    }
    if (name == "3d_default") {
        NetworkConfig cfg;
        cfg.in_channels = 4;
        cfg.time_steps = 4;
        cfg.num_classes = 6;
        cfg.channels = {32, 64, 128, 256};
        return cfg;
    }
    return network_config_from_kv(parse_kv_file(name));
}

std::vector<int> parse_dims(const std::string& s) {
    std::vector<int> out;
    std::string cur;
    for (char c : s + "x") {
        if (c == 'x' || c == 'X') {
            if (cur.empty()) throw ConfigError("--input: expected CxTxHxW, got '" + s + "'");
            out.push_back(parse_int("--input", cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (out.size() != 4) throw ConfigError("--input: expected 4 extents CxTxHxW, got '" + s + "'");
    return out;
}

void print_report(const MetricReport& r) {
    std::printf("overall_accuracy  %.6f\n", r.oa);
    std::printf("average_accuracy  %.6f\n", r.aa);
    std::printf("kappa             %.6f\n", r.kappa);
    std::printf("mean_iou          %.6f\n", r.miou);
    std::printf("fw_iou            %.6f\n", r.fwiou);
    std::printf("mean_f1           %.6f\n", r.mean_f1);
}

int run(int argc, char** argv) {
    CLI::App app{"MSFCN segmentation engine"};
    app.require_subcommand(1);

    // --- synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_kind = "shapes", synth_out;
    int synth_n = 12, synth_size = 64, synth_classes = 4, synth_t = 4;
    uint64_t synth_seed = 1;
    synth->add_option("--kind", synth_kind, "shapes | temporal")
        ->check(CLI::IsMember({"shapes", "temporal"}));
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n", synth_n, "number of images");
    synth->add_option("--size", synth_size, "image edge length");
    synth->add_option("--classes", synth_classes, "class count (shapes)");
    synth->add_option("--time-steps", synth_t, "time steps (temporal)");
    synth->add_option("--seed", synth_seed, "rng seed");

    // --- tile
    auto* tile = app.add_subcommand("tile", "cut an image/label pair into patches");
    std::string tile_image, tile_label, tile_out;
    int tile_patch = 256;
    tile->add_option("--image", tile_image, "input image .tns")->required();
    tile->add_option("--label", tile_label, "input label .tns")->required();
    tile->add_option("--patch", tile_patch, "patch edge length");
    tile->add_option("--out", tile_out, "output directory")->required();

    // --- split
    auto* split = app.add_subcommand("split", "assign train/val/test in a manifest");
    std::string split_manifest, split_fracs = "0.6,0.2,0.2";
    uint64_t split_seed = 1;
    split->add_option("--manifest", split_manifest, "manifest.csv to rewrite")->required();
    split->add_option("--fractions", split_fracs, "train,val,test fractions");
    split->add_option("--seed", split_seed, "rng seed");

    // --- train
    auto* train = app.add_subcommand("train", "train a network");
    std::string train_config;
    uint64_t train_seed = 0;
    bool train_seed_set = false;
    train->add_option("--config", train_config, "run config file")->required();
    train->add_option("--seed", train_seed, "override config seed")
        ->each([&](const std::string&) { train_seed_set = true; });

    // --- eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string eval_ckpt, eval_manifest, eval_split = "test", eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
    eval->add_option("--split", eval_split, "train | val | test");
    eval->add_option("--out", eval_out, "directory for csv reports");

    // --- predict
    auto* predict = app.add_subcommand("predict", "predict labels for one image");
    std::string pred_ckpt, pred_image, pred_out;
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint directory")->required();
    predict->add_option("--image", pred_image, "input image .tns")->required();
    predict->add_option("--out", pred_out, "output label .tns")->required();

    // --- gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    uint64_t gc_seed = 1;
    gc->add_option("--seed", gc_seed, "rng seed");

    // --- summary
    auto* summary = app.add_subcommand("summary", "parameter and MAC accounting");
    std::string sum_config = "2d_default", sum_input = "3x1x256x256";
    summary->add_option("--config", sum_config, "config file or preset (2d_default, 3d_default)");
    summary->add_option("--input", sum_input, "input extents CxTxHxW");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);  // prints the message / help text
        return code == 0 ? 0 : 1;
    }

    if (*synth) {
        if (synth_kind == "shapes")
            synth_shapes(synth_out, synth_n, synth_size, synth_classes, synth_seed);
        else
            synth_temporal(synth_out, synth_n, synth_size, synth_t, synth_seed);
        std::printf("wrote %d images to %s\n", synth_n, synth_out.c_str());
        return 0;
    }

    if (*tile) {
        const Tensor image = load_tensor(tile_image);
        const LabelMap label = load_labelmap(tile_label);
        PatchSet ps = tile_patches(image, label, uint32_t(tile_patch));
        std::filesystem::create_directories(tile_out);
        DatasetManifest m;
        m.dir = tile_out;
        m.channels = int(image.shape[0]);
        m.time_steps = int(image.shape[1]);
        m.patch = tile_patch;
        uint16_t max_label = 0;
        for (uint16_t v : label.data)
            if (v != kIgnoreLabel) max_label = std::max(max_label, v);
        m.num_classes = int(max_label) + 1;
        for (uint32_t gr = 0; gr < ps.grid.rows; ++gr)
            for (uint32_t gc2 = 0; gc2 < ps.grid.cols; ++gc2) {
                const size_t i = size_t(gr) * ps.grid.cols + gc2;
                char img_name[48], lab_name[48];
                std::snprintf(img_name, sizeof img_name, "img_r%02u_c%02u.tns", gr, gc2);
                std::snprintf(lab_name, sizeof lab_name, "lab_r%02u_c%02u.tns", gr, gc2);
                save_tensor(ps.images[i], std::filesystem::path(tile_out) / img_name);
                save_labelmap(ps.labels[i], std::filesystem::path(tile_out) / lab_name);
                m.entries.push_back({img_name, lab_name, "train"});
            }
        save_manifest(m, std::filesystem::path(tile_out) / "manifest.csv");
        std::printf("grid %ux%u, %zu patches of %d, padded %ux%u from %ux%u\n", ps.grid.rows,
                    ps.grid.cols, ps.images.size(), tile_patch, ps.grid.padded_h, ps.grid.padded_w,
                    ps.grid.orig_h, ps.grid.orig_w);
        return 0;
    }

    if (*split) {
        auto fr = parse_int_list;  // reuse trimming behavior via parse_double on items
        (void)fr;
        std::vector<double> f;
        std::stringstream ss(split_fracs);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(parse_double("--fractions", item));
        if (f.size() != 3) throw ConfigError("--fractions: expected train,val,test");
        DatasetManifest m = load_manifest(split_manifest);
        split_dataset(m.entries, f[0], f[1], f[2], split_seed);
        save_manifest(m, split_manifest);
        std::printf("rewrote %s: %zu train / %zu val / %zu test\n", split_manifest.c_str(),
                    m.split_indices("train").size(), m.split_indices("val").size(),
                    m.split_indices("test").size());
        return 0;
    }

    if (*train) {
        RunConfig rc = RunConfig::from_file(train_config);
        if (train_seed_set) rc.net.seed = train_seed;
        if (rc.manifest.empty()) throw ConfigError("config needs data.manifest");
        if (rc.run_dir.empty()) throw ConfigError("config needs run.dir");
        const DatasetManifest data = load_manifest(rc.manifest);
        if (data.channels != rc.net.in_channels)
            throw ConfigError("manifest channels=" + std::to_string(data.channels) +
                              " but net.in_channels=" + std::to_string(rc.net.in_channels));
        if (data.time_steps != rc.net.time_steps)
            throw ConfigError("manifest time_steps=" + std::to_string(data.time_steps) +
                              " but net.time_steps=" + std::to_string(rc.net.time_steps));
        if (data.num_classes != rc.net.num_classes)
            throw ConfigError("manifest num_classes=" + std::to_string(data.num_classes) +
                              " but net.num_classes=" + std::to_string(rc.net.num_classes));

        Network net = build_network<float>(rc.net);
        std::printf("parameters: %zu\n", count_params(net));
        TrainOptions opt;
        opt.adam.lr = rc.train.lr;
        opt.batch_size = rc.train.batch_size;
        opt.max_epochs = rc.train.max_epochs;
        opt.patience = rc.train.patience;
        opt.augment = rc.train.augment;
        opt.seed = rc.net.seed;
        opt.run_dir = rc.run_dir;
        std::filesystem::create_directories(opt.run_dir);
        write_kv_file(rc.to_kv(), opt.run_dir / "config.txt");
        TrainResult res = train_network(net, data, opt);
        std::printf("best val_oa %.6f at epoch %d (%d epochs run)\n", res.best_val_oa,
                    res.best_epoch, res.epochs_run);

        if (!data.split_indices("test").empty()) {
            Network best = load_checkpoint<float>(opt.run_dir / "best");
            ConfusionMatrix cm(data.num_classes);
            MetricReport r = evaluate_split(best, data, "test", &cm);
            write_metrics_csv(r, opt.run_dir / "metrics.csv");
            write_per_class_csv(r, opt.run_dir / "per_class.csv");
            write_confusion_csv(cm, opt.run_dir / "confusion.csv");
            std::printf("test split:\n");
            print_report(r);
        }
        return 0;
    }

    if (*eval) {
        Network net = load_checkpoint<float>(eval_ckpt);
        DatasetManifest data = load_manifest(eval_manifest);
        ConfusionMatrix cm(data.num_classes);
        MetricReport r = evaluate_split(net, data, eval_split, &cm);
        print_report(r);
        if (!eval_out.empty()) {
            std::filesystem::create_directories(eval_out);
            write_metrics_csv(r, std::filesystem::path(eval_out) / "metrics.csv");
            write_per_class_csv(r, std::filesystem::path(eval_out) / "per_class.csv");
            write_confusion_csv(cm, std::filesystem::path(eval_out) / "confusion.csv");
        }
        return 0;
    }

    if (*predict) {
        Network net = load_checkpoint<float>(pred_ckpt);
        const Tensor image = load_tensor(pred_image);
        save_labelmap(predict_labels(net, image), pred_out);
        std::printf("wrote %s\n", pred_out.c_str());
        return 0;
    }

    if (*gc) {
        const auto cases = run_gradcheck_suite(gc_seed);
        bool ok = true;
        std::printf("%-28s %-12s %-8s %s\n", "case", "max_rel_err", "tol", "status");
        for (const auto& c : cases) {
            std::printf("%-28s %-12.3e %-8.0e %s\n", c.name.c_str(), c.max_rel_err, c.tol,
                        c.pass ? "ok" : "FAIL");
            ok = ok && c.pass;
        }
        if (!ok) throw NumericError("gradient check failed");
        return 0;
    }

    if (*summary) {
        NetworkConfig cfg = preset_or_file(sum_config);
        const std::vector<int> dims = parse_dims(sum_input);
        if (dims[0] != cfg.in_channels || dims[1] != cfg.time_steps)
            throw ConfigError("--input channels/time must match config (" +
                              std::to_string(cfg.in_channels) + "," +
                              std::to_string(cfg.time_steps) + ")");
        NetworkT<float> net = build_network<float>(cfg);
        std::printf("parameters: %zu\n", count_params(net));
        const auto rows = network_costs(cfg, dims[2], dims[3]);
        unsigned long long total = 0;
        std::printf("%-18s %14s\n", "layer", "MACs");
        for (const auto& r : rows) {
            std::printf("%-18s %14llu\n", r.layer.c_str(), r.macs);
            total += r.macs;
        }
        std::printf("total: %llu MACs (%.2f GMac) for input %s\n", total, double(total) / 1e9,
                    sum_input.c_str());
        std::printf("convention: one MAC per kernel multiply; bias, batchnorm,\n"
                    "activations and pooling are excluded.\n");
        return 0;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {  // shape/format/data/checkpoint
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
