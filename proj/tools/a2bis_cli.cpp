// Command-line front door: synthetic data, target building, training,
// inference, proposal, evaluation, and small numeric utilities.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "a2bis/checkpoint.hpp"
#include "a2bis/metrics.hpp"
#include "a2bis/net.hpp"
#include "a2bis/proposal.hpp"
#include "a2bis/synth.hpp"
#include "a2bis/tensor_io.hpp"
#include "a2bis/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace a2bis;

namespace {

void atomic_write_text(const fs::path& path, const std::string& text) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string());
        f << text;
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

json read_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return json::parse(f);
}

void check_keys(const json& j, const char* what,
                std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok)
            throw std::runtime_error(std::string("unknown key \"") + key + "\" in " + what);
    }
}

// ---- config (de)serialization; unknown keys rejected, defaults materialized ----

SynthConfig synth_from_json(const json& j) {
    check_keys(j, "synth config",
               {"image_size", "n_classes", "min_instances", "max_instances", "min_len",
                "max_len", "min_wid", "max_wid", "cross_probability", "noise_sigma"});
    SynthConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.n_classes = j.value("n_classes", c.n_classes);
    c.min_instances = j.value("min_instances", c.min_instances);
    c.max_instances = j.value("max_instances", c.max_instances);
    c.min_len = j.value("min_len", c.min_len);
    c.max_len = j.value("max_len", c.max_len);
    c.min_wid = j.value("min_wid", c.min_wid);
    c.max_wid = j.value("max_wid", c.max_wid);
    c.cross_probability = j.value("cross_probability", c.cross_probability);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.validate();
    return c;
}

json synth_to_json(const SynthConfig& c) {
    return {{"image_size", c.image_size},       {"n_classes", c.n_classes},
            {"min_instances", c.min_instances}, {"max_instances", c.max_instances},
            {"min_len", c.min_len},             {"max_len", c.max_len},
            {"min_wid", c.min_wid},             {"max_wid", c.max_wid},
            {"cross_probability", c.cross_probability},
            {"noise_sigma", c.noise_sigma}};
}

NetConfig net_from_json(const json& j) {
    check_keys(j, "net config",
               {"stem_channels", "block_channels", "n_asa", "stride2_blocks",
                "head_channels", "n_cls", "in_h", "in_w"});
    NetConfig c;
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    c.block_channels = j.value("block_channels", c.block_channels);
    c.n_asa = j.value("n_asa", c.n_asa);
    c.stride2_blocks = j.value("stride2_blocks", c.stride2_blocks);
    c.head_channels = j.value("head_channels", c.head_channels);
    c.n_cls = j.value("n_cls", c.n_cls);
    c.in_h = j.value("in_h", c.in_h);
    c.in_w = j.value("in_w", c.in_w);
    c.validate();
    return c;
}

json net_to_json(const NetConfig& c) {
    return {{"stem_channels", c.stem_channels},   {"block_channels", c.block_channels},
            {"n_asa", c.n_asa},                   {"stride2_blocks", c.stride2_blocks},
            {"head_channels", c.head_channels},   {"n_cls", c.n_cls},
            {"in_h", c.in_h},                     {"in_w", c.in_w}};
}

LossConfig loss_from_json(const json& j) {
    check_keys(j, "loss config", {"gamma", "tau", "lambda_labeled", "delta", "eps"});
    LossConfig c;
    c.gamma = j.value("gamma", c.gamma);
    c.tau = j.value("tau", c.tau);
    c.lambda_labeled = j.value("lambda_labeled", c.lambda_labeled);
    c.delta = j.value("delta", c.delta);
    c.eps = j.value("eps", c.eps);
    return c;
}

json loss_to_json(const LossConfig& c) {
    return {{"gamma", c.gamma},
            {"tau", c.tau},
            {"lambda_labeled", c.lambda_labeled},
            {"delta", c.delta},
            {"eps", c.eps}};
}

TrainConfig train_from_json(const json& j) {
    check_keys(j, "train config",
               {"epochs", "batch_labeled", "batch_unlabeled", "lr", "lr_decay",
                "ema_alpha", "seed", "augment", "loss"});
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_labeled = j.value("batch_labeled", c.batch_labeled);
    c.batch_unlabeled = j.value("batch_unlabeled", c.batch_unlabeled);
    c.lr = j.value("lr", c.lr);
    c.lr_decay = j.value("lr_decay", c.lr_decay);
    c.ema_alpha = j.value("ema_alpha", c.ema_alpha);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    if (j.contains("loss")) c.loss = loss_from_json(j.at("loss"));
    c.validate();
    return c;
}

json train_to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_labeled", c.batch_labeled},
            {"batch_unlabeled", c.batch_unlabeled},
            {"lr", c.lr},
            {"lr_decay", c.lr_decay},
            {"ema_alpha", c.ema_alpha},
            {"seed", c.seed},
            {"augment", c.augment},
            {"loss", loss_to_json(c.loss)}};
}

json proposal_to_json(const ProposalConfig& c) {
    return {{"delta", c.delta},
            {"nms_iou", c.nms_iou},
            {"score_floor", c.score_floor},
            {"max_detections", c.max_detections},
            {"skeleton_score", c.skeleton_score}};
}

// ---- synth dataset layout helpers ----
// DIR/scene_NNNN.a2bt (image), DIR/annotations.json (multi-image GT),
// DIR/config.json (resolved config echo).

std::string scene_id(int n) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "scene_%04d", n);
    return buf;
}

struct LoadedDataset {
    std::vector<ImageGt> gts;       // empty scenes for unlabeled dirs
    std::vector<DenseMap> images;
};

LoadedDataset load_dataset(const fs::path& dir) {
    LoadedDataset out;
    json ann = read_json_file(dir / "annotations.json");
    out.gts = gt_set_from_json(ann);
    for (const ImageGt& g : out.gts)
        out.images.push_back(read_tensor((dir / (g.id + ".a2bt")).string()));
    return out;
}

// ---- subcommand bodies ----

int run_synth(const std::string& out_dir, int scenes, uint64_t seed,
              const std::string& config_file) {
    SynthConfig cfg;
    if (!config_file.empty()) {
        json j = read_json_file(config_file);
        check_keys(j, "config file", {"synth", "net", "train", "proposal"});
        if (j.contains("synth")) cfg = synth_from_json(j.at("synth"));
    }
    cfg.validate();
    fs::create_directories(out_dir);
    std::mt19937_64 rng(seed);
    std::vector<ImageGt> gts;
    for (int n = 0; n < scenes; ++n) {
        auto [img, scene] = gen_scene(cfg, rng);
        write_tensor(img, (fs::path(out_dir) / (scene_id(n) + ".a2bt")).string());
        gts.push_back({scene_id(n), std::move(scene)});
    }
    atomic_write_text(fs::path(out_dir) / "annotations.json",
                      gt_set_to_json(gts).dump(2) + "\n");
    json echo = {{"synth", synth_to_json(cfg)}, {"scenes", scenes}, {"seed", seed}};
    atomic_write_text(fs::path(out_dir) / "config.json", echo.dump(2) + "\n");
    return 0;
}

int run_targets(const std::string& annotations, int n_cls, const std::string& prefix) {
    json j = read_json_file(annotations);
    Scene scene = scene_from_json(j);
    TargetMaps t = build_targets(scene, n_cls);
    write_tensor(t.skl, prefix + ".skl.a2bt");
    write_tensor(t.seg, prefix + ".seg.a2bt");
    write_tensor(t.box, prefix + ".box.a2bt");
    write_tensor(t.owner, prefix + ".owner.a2bt");
    json echo = {{"annotations", annotations}, {"n_cls", n_cls}};
    atomic_write_text(prefix + ".config.json", echo.dump(2) + "\n");
    return 0;
}

int run_gradcheck(uint64_t seed) {
    GradCheckReport rep = grad_check(gradcheck_config(), seed);
    std::cout << "max_rel_error " << rep.max_rel_error << " over " << rep.n_sampled
              << " parameters\n";
    return rep.max_rel_error < 1e-4 ? 0 : 1;
}

int run_train(const std::string& labeled_dir, const std::string& unlabeled_dir,
              const std::string& config_file, const std::string& out_dir) {
    NetConfig net_cfg;
    TrainConfig train_cfg;
    if (!config_file.empty()) {
        json j = read_json_file(config_file);
        check_keys(j, "config file", {"net", "train", "synth", "proposal"});
        if (j.contains("net")) net_cfg = net_from_json(j.at("net"));
        if (j.contains("train")) train_cfg = train_from_json(j.at("train"));
    }
    net_cfg.validate();
    train_cfg.validate();

    LoadedDataset labeled = load_dataset(labeled_dir);
    if (labeled.gts.empty()) throw std::runtime_error("train: empty labeled set");
    std::vector<LabeledExample<float>> examples;
    for (size_t k = 0; k < labeled.gts.size(); ++k) {
        const DenseMap& img = labeled.images[k];
        if (img.h != net_cfg.in_h || img.w != net_cfg.in_w)
            throw std::runtime_error("train: image size does not match net config");
        examples.push_back({img, build_targets(labeled.gts[k].scene, net_cfg.n_cls)});
    }
    std::vector<DenseMap> unlabeled;
    if (!unlabeled_dir.empty()) unlabeled = load_dataset(unlabeled_dir).images;

    Net<float> net(net_cfg);
    ParamStore<float> student = net.init_params(train_cfg.seed);
    ParamStore<float> teacher = student;

    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / "log.jsonl", std::ios::trunc);
    train_loop(net, student, teacher, examples, unlabeled, train_cfg, &log);

    json echo = {{"net", net_to_json(net_cfg)}, {"train", train_to_json(train_cfg)}};
    save_checkpoint(student, (fs::path(out_dir) / "student").string());
    save_checkpoint(teacher, (fs::path(out_dir) / "teacher").string());
    atomic_write_text(fs::path(out_dir) / "student" / "config.json", echo.dump(2) + "\n");
    atomic_write_text(fs::path(out_dir) / "teacher" / "config.json", echo.dump(2) + "\n");
    atomic_write_text(fs::path(out_dir) / "config.json", echo.dump(2) + "\n");
    return 0;
}

int run_infer(const std::string& checkpoint, const std::string& image_file,
              const std::string& prefix) {
    json cfg_j = read_json_file(fs::path(checkpoint) / "config.json");
    NetConfig net_cfg = net_from_json(cfg_j.at("net"));
    Net<float> net(net_cfg);
    ParamStore<float> params = load_checkpoint<float>(checkpoint);
    DenseMap img = read_tensor(image_file);
    HeadMaps<float> out = net.forward(img, params);
    write_tensor(out.skl, prefix + ".skl.a2bt");
    write_tensor(out.seg, prefix + ".seg.a2bt");
    write_tensor(out.box, prefix + ".box.a2bt");
    json echo = {{"net", cfg_j.at("net")}, {"checkpoint", checkpoint}};
    atomic_write_text(prefix + ".config.json", echo.dump(2) + "\n");
    return 0;
}

int run_propose(const std::string& skl_f, const std::string& seg_f,
                const std::string& box_f, const std::string& out_f,
                const ProposalConfig& cfg) {
    DenseMap skl = read_tensor(skl_f);
    DenseMap seg = read_tensor(seg_f);
    DenseMap box = read_tensor(box_f);
    std::vector<Detection> dets = propose(skl, seg, box, cfg);
    atomic_write_text(out_f, detections_to_json(dets, skl.w).dump(2) + "\n");
    atomic_write_text(out_f + ".config.json", proposal_to_json(cfg).dump(2) + "\n");
    return 0;
}

int run_eval(const std::string& pred_f, const std::string& gt_f, const std::string& out_f) {
    std::vector<ImageGt> gts = gt_set_from_json(read_json_file(gt_f));
    std::vector<ImagePred> preds = pred_set_from_json(read_json_file(pred_f));
    EvalReport report = evaluate(gts, preds);
    atomic_write_text(out_f, report.to_json().dump(2) + "\n");
    json echo = {{"pred", pred_f}, {"gt", gt_f}};
    atomic_write_text(out_f + ".config.json", echo.dump(2) + "\n");
    return 0;
}

RBox parse_rbox(const std::string& s) {
    std::stringstream ss(s);
    double v[5];
    char comma;
    for (int i = 0; i < 5; ++i) {
        if (i > 0 && (!(ss >> comma) || comma != ','))
            throw CLI::ValidationError("box", "expected x,y,w,h,theta");
        if (!(ss >> v[i])) throw CLI::ValidationError("box", "expected x,y,w,h,theta");
    }
    return canonicalize({v[0], v[1], v[2], v[3], v[4]});
}

int run_boxdist(const std::string& a_s, const std::string& b_s, double tau) {
    RBox a = parse_rbox(a_s), b = parse_rbox(b_s);
    double d = gauss_distance(a, b);
    double loss = 1.0 - 1.0 / (tau + std::log1p(d));
    std::cout << "D " << d << "\nloss " << loss << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rotated-box instance segmentation pipeline"};
    app.require_subcommand(1);

    std::string out_dir, config_file, annotations, prefix, labeled_dir, unlabeled_dir;
    std::string checkpoint, image_file, skl_f, seg_f, box_f, out_f, pred_f, gt_f;
    std::string box_a, box_b;
    int scenes = 10, n_cls = 2;
    uint64_t seed = 0;
    double tau = 1.0;
    ProposalConfig prop_cfg;

    auto* synth = app.add_subcommand("synth", "generate synthetic scenes");
    synth->add_option("--out", out_dir, "output directory")->required();
    synth->add_option("--scenes", scenes, "number of scenes")->required();
    synth->add_option("--seed", seed, "rng seed");
    synth->add_option("--config", config_file, "JSON config with a synth section");

    auto* targets = app.add_subcommand("targets", "build supervision maps for one scene");
    targets->add_option("--annotations", annotations, "scene annotation JSON")->required();
    targets->add_option("--n-cls", n_cls, "number of object classes")->required();
    targets->add_option("--out-prefix", prefix, "output path prefix")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gradcheck->add_option("--seed", seed, "rng seed");

    auto* train = app.add_subcommand("train", "train on a synthetic dataset");
    train->add_option("--labeled", labeled_dir, "labeled dataset directory")->required();
    train->add_option("--unlabeled", unlabeled_dir, "unlabeled dataset directory");
    train->add_option("--config", config_file, "JSON config (net/train sections)");
    train->add_option("--out", out_dir, "output directory")->required();

    auto* infer = app.add_subcommand("infer", "run the net on one image");
    infer->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    infer->add_option("--image", image_file, "input image tensor")->required();
    infer->add_option("--out-prefix", prefix, "output path prefix")->required();

    auto* propose_cmd = app.add_subcommand("propose", "boxes and masks from head maps");
    propose_cmd->add_option("--skl", skl_f, "skeleton map tensor")->required();
    propose_cmd->add_option("--seg", seg_f, "segmentation map tensor")->required();
    propose_cmd->add_option("--box", box_f, "box offset map tensor")->required();
    propose_cmd->add_option("--out", out_f, "detections JSON")->required();
    propose_cmd->add_option("--nms-iou", prop_cfg.nms_iou, "NMS IoU threshold");
    propose_cmd->add_option("--score-floor", prop_cfg.score_floor, "minimum score");
    propose_cmd->add_flag_callback(
        "--no-skeleton-score", [&] { prop_cfg.skeleton_score = false; },
        "score boxes by seg alone (skip skeleton fusion)");

    auto* eval = app.add_subcommand("eval", "evaluate detections against ground truth");
    eval->add_option("--pred", pred_f, "predictions JSON")->required();
    eval->add_option("--gt", gt_f, "ground-truth JSON")->required();
    eval->add_option("--out", out_f, "report JSON")->required();

    auto* boxdist = app.add_subcommand("boxdist", "distance and loss between two boxes");
    boxdist->add_option("--a", box_a, "x,y,w,h,theta")->required();
    boxdist->add_option("--b", box_b, "x,y,w,h,theta")->required();
    boxdist->add_option("--tau", tau, "loss modulation");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage errors exit 2; --help exits 0
    }

    try {
        if (synth->parsed()) return run_synth(out_dir, scenes, seed, config_file);
        if (targets->parsed()) return run_targets(annotations, n_cls, prefix);
        if (gradcheck->parsed()) return run_gradcheck(seed);
        if (train->parsed()) return run_train(labeled_dir, unlabeled_dir, config_file, out_dir);
        if (infer->parsed()) return run_infer(checkpoint, image_file, prefix);
        if (propose_cmd->parsed()) return run_propose(skl_f, seg_f, box_f, out_f, prop_cfg);
        if (eval->parsed()) return run_eval(pred_f, gt_f, out_f);
        if (boxdist->parsed()) return run_boxdist(box_a, box_b, tau);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
