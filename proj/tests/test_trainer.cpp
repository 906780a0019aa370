#include "doctest.h"
#include "fixtures.hpp"

#include "fsprompt/ablation.hpp"
#include "fsprompt/autodiff.hpp"
#include "fsprompt/error.hpp"
#include "fsprompt/trainer.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

using namespace fsprompt;
using namespace fsprompt::testing;

namespace {

struct ToyTask {
    BackboneWeights weights = toy_backbone();
    SyntheticCorpus corpus;
    TaskOptions options;
    FewShotTask task;

    ToyTask() {
        DatasetConfig d;
        d.classes = weights.config().classes;
        d.per_class = 12;
        d.noise = 0.3;
        corpus = generate_dataset(d, weights.config());
        options.shots = 4;
        options.test_per_class = 4;
        task = split_base_novel(corpus, options, 0);
    }
};

TrainConfig toy_train(Method mode = Method::RESTORE) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.shots = 4;
    cfg.epochs = 2;
    cfg.a = cfg.b = 1;
    cfg.lr = 0.05;
    return cfg;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<double> snapshot(const TuneResult& r) {
    std::vector<double> out;
    for (const auto& t : r.prompts.parameters()) out.insert(out.end(), t.data().begin(), t.data().end());
    for (const auto& t : r.surgery.parameters()) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

}  // namespace

TEST_CASE("method table") {
    for (Method m : {Method::LPT, Method::VPT, Method::IVLP, Method::RESTORE, Method::RESTORE_no_surgery,
                     Method::fixed_alpha})
        CHECK(parse_method(to_string(m)) == m);
    CHECK_THROWS_AS(parse_method("MaPLe"), ConfigError);
    CHECK(prompt_mode_for(Method::LPT) == PromptMode::LPT);
    CHECK(prompt_mode_for(Method::RESTORE) == PromptMode::IVLP);
    CHECK(surgery_mode_for(Method::RESTORE) == SurgeryMode::dynamic);
    CHECK(surgery_mode_for(Method::fixed_alpha) == SurgeryMode::fixed);
    CHECK(surgery_mode_for(Method::RESTORE_no_surgery) == SurgeryMode::none);
    CHECK(surgery_mode_for(Method::IVLP) == SurgeryMode::none);
    CHECK(uses_fs_loss(Method::RESTORE));
    CHECK(uses_fs_loss(Method::fixed_alpha));
    CHECK_FALSE(uses_fs_loss(Method::IVLP));
    CHECK_FALSE(uses_fs_loss(Method::VPT));
}

TEST_CASE("TrainConfig validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    auto bad = [](auto mutate) {
        TrainConfig t;
        mutate(t);
        CHECK_THROWS_AS(t.validate(), ConfigError);
    };
    bad([](TrainConfig& t) { t.lambda_fs = -0.5; });
    bad([](TrainConfig& t) { t.lr = -1.0; });
    bad([](TrainConfig& t) { t.batch_size = 0; });
    bad([](TrainConfig& t) { t.epochs = 0; });
    bad([](TrainConfig& t) { t.gamma = -0.1; });
    bad([](TrainConfig& t) { t.tau = 0.0; });
    bad([](TrainConfig& t) { t.momentum = 1.0; });
}

TEST_CASE("step objective") {
    ToyTask toy;
    const auto base = toy.task.base_classes();
    const std::vector<std::size_t> classes(base.begin(), base.end());
    const LabeledImages& s = toy.task.support();
    std::vector<std::size_t> labels;
    for (std::size_t y : s.labels) labels.push_back(static_cast<std::size_t>(std::find(classes.begin(), classes.end(), y) - classes.begin()));
    TrainConfig cfg = toy_train();
    cfg.a = cfg.b = 2;
    TuneResult st = initial_state(cfg, toy.weights.config());

    SUBCASE("total is ce + lambda * fs against recomputed terms") {
        for (double lambda : {0.5, 1.0, 3.0}) {
            cfg.lambda_fs = lambda;
            const StepLoss loss = compute_step_loss(s.images, labels, classes, st.prompts, st.surgery, toy.weights, cfg);
            double ce = 0.0;
            const Tensor& lg = loss.prediction.logits;
            for (std::size_t i = 0; i < labels.size(); ++i) {
                double mx = -1e300, z = 0.0;
                for (std::size_t k = 0; k < lg.cols(); ++k) mx = std::max(mx, lg.at(i, k));
                for (std::size_t k = 0; k < lg.cols(); ++k) z += std::exp(lg.at(i, k) - mx);
                ce += mx + std::log(z) - lg.at(i, labels[i]);
            }
            ce /= static_cast<double>(labels.size());
            const auto v = loss.prediction.shifts.layer_norm_values(Tower::vision);
            const auto t = loss.prediction.shifts.layer_norm_values(Tower::text);
            double fs = 0.0;
            for (std::size_t l = 0; l < v.size(); ++l) fs += (v[l] - t[l]) * (v[l] - t[l]);
            CHECK(std::abs(loss.ce.item() - ce) <= 1e-12);
            CHECK(std::abs(loss.fs.item() - fs) <= 1e-12);
            CHECK(std::abs(loss.total.item() - (ce + lambda * fs)) <= 1e-12);
            CHECK(fs > 0.0);
        }
    }
    SUBCASE("lambda zero leaves the fs term out of the graph") {
        cfg.lambda_fs = 0.0;
        Graph g;
        GraphScope scope(g);
        const StepLoss loss = compute_step_loss(s.images, labels, classes, st.prompts, st.surgery, toy.weights, cfg);
        CHECK(loss.fs.numel() == 0);
        CHECK(loss.total.bitwise_equal(loss.ce));
        for (const auto& node : g.nodes()) CHECK(node.kind != OpKind::square);
    }
    SUBCASE("modes without the consistency term") {
        for (Method m : {Method::IVLP, Method::LPT, Method::VPT}) {
            cfg.mode = m;
            TuneResult fresh = initial_state(cfg, toy.weights.config());
            const StepLoss loss = compute_step_loss(s.images, labels, classes, fresh.prompts, fresh.surgery, toy.weights, cfg);
            CHECK(loss.fs.numel() == 0);
        }
    }
}

TEST_CASE("tune") {
    ToyTask toy;
    SUBCASE("lr zero changes nothing") {
        TrainConfig cfg = toy_train();
        cfg.lr = 0.0;
        const auto before = snapshot(initial_state(cfg, toy.weights.config()));
        const TuneResult r = tune(toy.task, toy.weights, cfg, 1);
        CHECK(r.telemetry.size() == 1);
        CHECK(snapshot(r) == before);
    }
    SUBCASE("updates prompts and surgery, never the backbone") {
        TrainConfig cfg = toy_train();
        const auto before = snapshot(initial_state(cfg, toy.weights.config()));
        const BackboneWeights reference = toy_backbone();
        const TuneResult r = tune(toy.task, toy.weights, cfg);
        CHECK(snapshot(r) != before);
        CHECK(r.telemetry.size() == cfg.epochs * 2);  // 8 support samples, batch 4
        Rng rng(1, 1);
        const Tensor img = random_image(toy.weights.config(), rng);
        CHECK(encode_image(img, toy.weights).bitwise_equal(encode_image(img, reference)));
        for (const auto& t : r.telemetry) {
            CHECK(t.vision_norms.size() == toy.weights.config().layers);
            CHECK(t.alpha_vision > 0.0);
            CHECK(std::abs(t.total - (t.ce + cfg.lambda_fs * t.fs)) <= 1e-12 * std::max(1.0, t.total));
        }
    }
    SUBCASE("no-surgery modes leave the adapter untouched") {
        TrainConfig cfg = toy_train(Method::RESTORE_no_surgery);
        const TuneResult init = initial_state(cfg, toy.weights.config());
        const TuneResult r = tune(toy.task, toy.weights, cfg);
        for (std::size_t i = 0; i < init.surgery.parameters().size(); ++i)
            CHECK(r.surgery.parameters()[i].bitwise_equal(init.surgery.parameters()[i]));
        for (const auto& t : r.telemetry) CHECK(t.alpha_vision == 0.0);
    }
    SUBCASE("deterministic") {
        const TrainConfig cfg = toy_train();
        CHECK(snapshot(tune(toy.task, toy.weights, cfg)) == snapshot(tune(toy.task, toy.weights, cfg)));
    }
    SUBCASE("uni-modal modes warn and skip the consistency loss") {
        for (Method m : {Method::LPT, Method::VPT}) {
            const TuneResult r = tune(toy.task, toy.weights, toy_train(m));
            REQUIRE(r.warnings.size() == 1);
            CHECK(r.warnings[0].find("fs loss skipped") != std::string::npos);
            for (const auto& t : r.telemetry) {
                CHECK(t.fs == 0.0);
                const auto& silent = m == Method::LPT ? t.vision_norms : t.text_norms;
                for (double n : silent) CHECK(n == 0.0);
            }
        }
        TrainConfig cfg = toy_train(Method::LPT);
        cfg.lambda_fs = 0.0;
        CHECK(tune(toy.task, toy.weights, cfg).warnings.empty());
    }
    SUBCASE("tuning never reads novel data") {
        std::set<std::string> seen;
        toy.task.set_observer([&](std::string_view s) { seen.emplace(s); });
        const TuneResult r = tune(toy.task, toy.weights, toy_train());
        CHECK(seen.count("novel_classes") == 0);
        CHECK(seen.count("novel_test") == 0);
        CHECK(seen.count("support") == 1);
        seen.clear();
        evaluate(toy.task, r, toy.weights, toy_train());
        CHECK(seen.count("novel_test") == 1);
    }
    SUBCASE("requires frozen weights") {
        BackboneWeights live = BackboneWeights::initialize(toy.weights.config(), 2);
        CHECK_THROWS_AS(tune(toy.task, live, toy_train()), ConfigError);
    }
    SUBCASE("non-finite loss aborts with the shift record") {
        TrainConfig cfg = toy_train();
        cfg.tau = 1e-320;
        try {
            tune(toy.task, toy.weights, cfg);
            FAIL("expected an abort");
        } catch (const Error& e) {
            CHECK(e.code() == "non_finite_loss");
            CHECK(std::string(e.what()).find("vision_norms") != std::string::npos);
        }
    }
}

TEST_CASE("harmonic mean") {
    CHECK(harmonic_mean(83.44, 76.35) == doctest::Approx(79.74).epsilon(0.01 / 79.74));
    CHECK(std::abs(harmonic_mean(83.44, 76.35) - 79.74) <= 0.01);
    CHECK(harmonic_mean(42.0, 42.0) == doctest::Approx(42.0).epsilon(1e-15));
    CHECK(harmonic_mean(0.0, 50.0) == 0.0);
    CHECK(harmonic_mean(50.0, 0.0) == 0.0);
    Rng rng(3, 1);
    for (int i = 0; i < 1000; ++i) {
        const double a = 100.0 * rng.uniform(), b = 100.0 * rng.uniform();
        const double h = harmonic_mean(a, b);
        CHECK(h >= std::min(a, b) - 1e-12);
        CHECK(h <= std::max(a, b) + 1e-12);
        CHECK((h > 0.0) == (a > 0.0 && b > 0.0));
    }
}

TEST_CASE("evaluate") {
    ToyTask toy;
    const TrainConfig cfg = toy_train();
    const TuneResult r = tune(toy.task, toy.weights, cfg);
    const EvalReport rep = evaluate(toy.task, r, toy.weights, cfg, {.all_classes = false, .embeddings = true, .chunk = 3});
    CHECK(rep.hm == harmonic_mean(rep.base_acc, rep.novel_acc));
    CHECK(rep.per_class_acc.size() == 4);
    CHECK(rep.mean_vision_shift > 0.0);
    CHECK(rep.final_fs_loss == r.telemetry.back().fs);
    std::size_t images = 0, classes = 0;
    for (const auto& row : rep.embeddings.rows) {
        CHECK(row.values.size() == toy.weights.config().embed_dim);
        (row.kind == "image" ? images : classes) += 1;
    }
    CHECK(images == 16);
    CHECK(classes == 4);
    // Chunking does not change the result.
    const EvalReport one = evaluate(toy.task, r, toy.weights, cfg, {.all_classes = false, .embeddings = false, .chunk = 100});
    CHECK(one.base_acc == rep.base_acc);
    CHECK(one.novel_acc == rep.novel_acc);
}

TEST_CASE("an untrained model scores at chance over all classes") {
    const EncoderConfig enc;
    const SyntheticCorpus corpus = generate_dataset(DatasetConfig{}, enc);
    TrainConfig cfg;
    cfg.mode = Method::IVLP;
    cfg.a = cfg.b = 0;
    double base = 0.0, novel = 0.0;
    const int seeds = 10;
    for (int s = 0; s < seeds; ++s) {
        BackboneWeights w = BackboneWeights::initialize(enc, 1000 + static_cast<std::uint64_t>(s));
        w.freeze();
        const FewShotTask task = split_base_novel(corpus, TaskOptions{}, static_cast<std::uint64_t>(s));
        const TuneResult fresh = initial_state(cfg, enc);
        const EvalReport rep = evaluate(task, fresh, w, cfg, {.all_classes = true, .embeddings = false, .chunk = 32});
        base += rep.base_acc / seeds;
        novel += rep.novel_acc / seeds;
    }
    CHECK(std::abs(base - 10.0) <= 5.0);
    CHECK(std::abs(novel - 10.0) <= 5.0);
}

TEST_CASE("support loss falls within 50 steps on the default task") {
    const BackboneWeights& w = default_backbone();
    const RunConfig rc;
    const SyntheticCorpus corpus = generate_dataset(rc.data, rc.encoder);
    for (std::uint64_t seed : {0, 1, 2}) {
        TrainConfig cfg = rc.train;
        cfg.seed = seed;
        const FewShotTask task = split_base_novel(corpus, rc.task_options(), seed);
        const TuneResult init = initial_state(cfg, w.config());
        const double before = support_loss(task, init, w, cfg);
        const TuneResult after = tune(task, w, cfg, 50);
        CHECK(after.telemetry.size() == 50);
        CHECK(support_loss(task, after, w, cfg) < before);
    }
}

TEST_CASE("ablation and reports") {
    ToyTask toy;
    TrainConfig cfg = toy_train();
    cfg.epochs = 1;
    const auto dir = scratch_dir("trainer_reports");

    SUBCASE("single seed, single lambda, single mode is one row") {
        const AblationTable t = run_ablation({1.0}, {Method::RESTORE}, cfg, {0}, toy.corpus, toy.options, toy.weights);
        REQUIRE(t.rows.size() == 1);
        CHECK(t.rows[0].seeds == 1);
        CHECK(t.rows[0].hm.std == 0.0);
        CHECK(&t.at(1.0, Method::RESTORE) == &t.rows[0]);
        CHECK_THROWS(t.at(2.0, Method::RESTORE));
        CHECK_THROWS_AS(run_ablation({}, {Method::RESTORE}, cfg, {0}, toy.corpus, toy.options, toy.weights), ConfigError);
    }
    SUBCASE("ablation CSV is reproducible") {
        const std::vector<double> grid{0.0, 1.0};
        const auto t1 = run_ablation(grid, ablation_modes(), cfg, {0, 1}, toy.corpus, toy.options, toy.weights);
        const auto t2 = run_ablation(grid, ablation_modes(), cfg, {0, 1}, toy.corpus, toy.options, toy.weights);
        CHECK(t1.rows.size() == 6);
        write_ablation_csv(t1, dir / "a1.csv");
        write_ablation_csv(t2, dir / "a2.csv");
        const std::string text = read_file(dir / "a1.csv");
        CHECK(text == read_file(dir / "a2.csv"));
        CHECK(text.starts_with("lambda_fs,mode,seeds,base_mean,base_std,novel_mean,novel_std,hm_mean,hm_std\n"));
        CHECK(std::count(text.begin(), text.end(), '\n') == 7);
    }
    SUBCASE("mean_std") {
        const MeanStd m = mean_std({1.0, 3.0});
        CHECK(m.mean == 2.0);
        CHECK(m.std == 1.0);
    }
    SUBCASE("shift report") {
        std::vector<TrainConfig> configs;
        for (Method m : {Method::LPT, Method::IVLP}) {
            TrainConfig c = cfg;
            c.mode = m;
            c.lambda_fs = 0.0;
            configs.push_back(c);
        }
        TrainConfig zero = cfg;
        zero.mode = Method::IVLP;
        zero.a = zero.b = 0;
        configs.push_back(zero);
        const auto runs = run_many(toy.corpus, toy.options, toy.weights, configs, {.all_classes = false, .embeddings = true, .chunk = 32});
        const auto rows = shift_report(runs, dir / "shift");
        REQUIRE(rows.size() == 3);
        for (double v : rows[0].vision) CHECK(v == 0.0);
        for (double t : rows[0].text) CHECK(t > 0.0);
        for (double v : rows[1].vision) CHECK(v > 0.0);
        for (const auto* side : {&rows[2].vision, &rows[2].text, &rows[2].discrepancy})
            for (double v : *side) CHECK(v == 0.0);
        for (const char* f : {"shift_telemetry.csv", "shift_summary.csv", "shift_modes.csv", "embeddings.csv"})
            CHECK(std::filesystem::file_size(dir / "shift" / f) > 0);
        CHECK(read_file(dir / "shift" / "shift_summary.csv").starts_with("run,mode,seed,layer,vision_norm,text_norm,discrepancy\n"));
        CHECK_THROWS_AS(shift_report({}, dir / "empty"), ConfigError);
        std::ofstream(dir / "file") << "x";
        CHECK_THROWS_AS(shift_report(runs, dir / "file" / "sub"), IoError);
    }
    SUBCASE("telemetry and report writers") {
        const ExperimentResult r = run_experiment(toy.corpus, toy.options, toy.weights, cfg);
        write_telemetry_csv(r.tuned.telemetry, dir / "telemetry.csv");
        const std::string tel = read_file(dir / "telemetry.csv");
        CHECK(tel.starts_with("step,layer,modality,norm,fs_loss,alpha\n"));
        const std::size_t layers = toy.weights.config().layers;
        CHECK(static_cast<std::size_t>(std::count(tel.begin(), tel.end(), '\n')) == 1 + 2 * layers * r.tuned.telemetry.size());
        write_report_json(r.report, dir / "report.json");
        const std::string json = read_file(dir / "report.json");
        for (const char* key : {"\"base_acc\"", "\"novel_acc\"", "\"hm\"", "\"per_class_acc\"", "\"mean_vision_shift\"",
                                "\"mean_text_shift\"", "\"final_fs_loss\""})
            CHECK(json.find(key) != std::string::npos);
        CHECK(json.find("\"base_acc\"") < json.find("\"final_fs_loss\""));
        CHECK_THROWS_AS(write_report_json(r.report, dir / "nope" / "r.json"), IoError);
    }
}
