// Command-line front end for the orthonormal product-quantization pipeline:
// codebook generation, training, database encoding, retrieval, evaluation,
// codeword-angle inspection, and synthetic data generation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "opqn/codebook.hpp"
#include "opqn/data_io.hpp"
#include "opqn/eval.hpp"
#include "opqn/index.hpp"
#include "opqn/parallel.hpp"
#include "opqn/trainer.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// All-or-nothing file output: writers target `tmp()`, and only commit()
/// renames into place. Uncommitted temporaries are removed on unwind so a
/// failed command leaves no partial outputs behind.
class AtomicOutput {
public:
    explicit AtomicOutput(std::string path) : path_(std::move(path)), tmp_(path_ + ".tmp") {}
    ~AtomicOutput() {
        if (!committed_) {
            std::error_code ec;
            fs::remove(tmp_, ec);
        }
    }
    const std::string& tmp() const { return tmp_; }
    void commit() {
        fs::rename(tmp_, path_);
        committed_ = true;
    }

private:
    std::string path_;
    std::string tmp_;
    bool committed_ = false;
};

struct RankedRow {
    std::uint32_t query_id;
    std::uint32_t rank;
    std::uint32_t db_id;
    double score;
};

std::vector<RankedRow> read_ranking_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("query_id,", 0) != 0) {
        throw std::runtime_error("not a ranking CSV (missing header): " + path);
    }
    std::vector<RankedRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        RankedRow r;
        char* end = nullptr;
        r.query_id = std::uint32_t(std::strtoul(line.c_str(), &end, 10));
        if (*end != ',') throw std::runtime_error("malformed ranking row: " + line);
        r.rank = std::uint32_t(std::strtoul(end + 1, &end, 10));
        if (*end != ',') throw std::runtime_error("malformed ranking row: " + line);
        r.db_id = std::uint32_t(std::strtoul(end + 1, &end, 10));
        if (*end != ',') throw std::runtime_error("malformed ranking row: " + line);
        r.score = std::strtod(end + 1, &end);
        rows.push_back(r);
    }
    return rows;
}

int cmd_gen_codebook(std::uint32_t m, std::uint32_t d, std::uint32_t k, double perturb_variance,
                     std::uint64_t perturb_seed, const std::string& out) {
    opqn::CodebookSpec spec{m, d, k};
    spec.validate();
    opqn::CodebookSet set = opqn::generate_orthonormal_codebooks(spec);
    if (perturb_variance > 0.0) {
        set = opqn::perturb_codebooks(set, perturb_variance, perturb_seed);
    }
    AtomicOutput guard(out);
    opqn::save_codebooks(set, guard.tmp());
    guard.commit();
    const auto report = opqn::validate_orthonormality(set, 1e-10);
    std::cout << "codebooks: M=" << m << " d=" << d << " K=" << k
              << " bits=" << spec.code_bits() << "\n"
              << "max_gram_residual: " << fmt(report.max_gram_residual)
              << (report.pass ? " (orthonormal)" : " (NOT orthonormal)") << "\n";
    return 0;
}

int cmd_synth(const opqn::SyntheticConfig& cfg, const std::string& out) {
    const opqn::EmbeddingDataset ds = opqn::generate_synthetic(cfg);
    AtomicOutput guard(out);
    opqn::save_embeddings(ds, guard.tmp());
    guard.commit();
    std::cout << "synthetic dataset: " << ds.count << " samples, dim " << ds.dim << ", "
              << ds.n_classes << " classes\n";
    return 0;
}

int cmd_split(const std::string& data_path, std::uint32_t queries_per_class,
              double unseen_fraction, const std::string& train_out, const std::string& db_out,
              const std::string& queries_out) {
    const opqn::EmbeddingDataset ds = opqn::load_embeddings(data_path);
    std::vector<AtomicOutput> guards;
    if (unseen_fraction > 0.0) {
        if (train_out.empty()) {
            throw std::runtime_error("--train-out is required with --unseen-fraction");
        }
        const opqn::UnseenSplit split = opqn::split_unseen(ds, unseen_fraction, queries_per_class);
        guards.emplace_back(train_out);
        guards.emplace_back(db_out);
        guards.emplace_back(queries_out);
        opqn::save_embeddings(split.train, guards[0].tmp());
        opqn::save_embeddings(split.database, guards[1].tmp());
        opqn::save_embeddings(split.queries, guards[2].tmp());
        std::cout << "unseen split: " << split.train.count << " train, " << split.database.count
                  << " database, " << split.queries.count << " queries\n";
    } else {
        const opqn::StandardSplit split = opqn::split_standard(ds, queries_per_class);
        guards.emplace_back(db_out);
        guards.emplace_back(queries_out);
        opqn::save_embeddings(split.database, guards[0].tmp());
        opqn::save_embeddings(split.queries, guards[1].tmp());
        std::cout << "standard split: " << split.database.count << " database, "
                  << split.queries.count << " queries\n";
    }
    for (AtomicOutput& g : guards) g.commit();
    return 0;
}

int cmd_train(const std::string& data_path, opqn::TrainConfig cfg,
              const std::string& codebook_path, const std::string& out,
              std::string log_path) {
    const opqn::EmbeddingDataset ds = opqn::load_embeddings(data_path);
    if (!codebook_path.empty()) cfg.codebooks = opqn::load_codebooks(codebook_path);
    const opqn::TrainResult result = opqn::train(ds, cfg);

    if (log_path.empty()) log_path = out + ".log.csv";
    AtomicOutput model_guard(out);
    AtomicOutput log_guard(log_path);
    opqn::save_model(result.params, model_guard.tmp());
    {
        std::ofstream os(log_guard.tmp());
        if (!os) throw std::runtime_error("cannot open for writing: " + log_path);
        opqn::write_train_log_csv(result.log, os);
    }
    model_guard.commit();
    log_guard.commit();

    const opqn::TrainLogEntry& last = result.log.back();
    std::cout << "trained " << cfg.epochs << " epochs on " << ds.count << " samples ("
              << result.class_ids.size() << " classes)\n"
              << "final: loss=" << fmt(last.loss_total) << " acc=" << fmt(last.train_acc) << "\n"
              << "fingerprint: " << opqn::fingerprint_hex(opqn::model_fingerprint(result.params))
              << "\n";
    return 0;
}

int cmd_encode(const std::string& model_path, const std::string& data_path,
               const std::string& out) {
    const opqn::ModelParams model = opqn::load_model(model_path);
    const opqn::EmbeddingDataset ds = opqn::load_embeddings(data_path);
    const opqn::EncodedDatabase db = opqn::encode_database(model, ds);
    AtomicOutput guard(out);
    opqn::save_database(db, guard.tmp());
    guard.commit();
    std::cout << "encoded " << db.count << " items, " << db.m_books << " codes each ("
              << db.code_bytes << " byte(s) per code)\n";
    return 0;
}

int cmd_query(const std::string& model_path, const std::string& db_path,
              const std::string& queries_path, std::uint32_t topk, const std::string& out) {
    const opqn::ModelParams model = opqn::load_model(model_path);
    opqn::EncodedDatabase db = opqn::load_database(db_path);
    if (db.fingerprint != opqn::model_fingerprint(model)) {
        throw std::runtime_error("fingerprint mismatch: database was encoded by another model");
    }
    db.codebooks_orthonormal = model.codebooks.orthonormal;
    const opqn::EmbeddingDataset queries = opqn::load_embeddings(queries_path);

    AtomicOutput guard(out);
    std::ofstream os(guard.tmp());
    if (!os) throw std::runtime_error("cannot open for writing: " + out);
    os << "query_id,rank,db_id,score\n";
    for (std::uint32_t qi = 0; qi < queries.count; ++qi) {
        const opqn::RankedResult res = opqn::query(model, db, queries.row(qi), topk);
        for (std::size_t r = 0; r < res.hits.size(); ++r) {
            os << qi << ',' << (r + 1) << ',' << res.hits[r].first << ','
               << fmt(res.hits[r].second) << '\n';
        }
    }
    os.close();
    guard.commit();
    std::cout << "ranked " << queries.count << " queries against " << db.count << " items\n";
    return 0;
}

int cmd_eval(const std::string& ranking_path, const std::string& queries_path,
             const std::string& db_path, const std::vector<std::uint32_t>& at,
             std::uint32_t pr_points, const std::string& pr_out, const std::string& out) {
    const std::vector<RankedRow> rows = read_ranking_csv(ranking_path);
    const opqn::EmbeddingDataset queries = opqn::load_embeddings(queries_path);
    const opqn::EncodedDatabase db = opqn::load_database(db_path);

    std::map<std::uint32_t, std::vector<RankedRow>> by_query;
    for (const RankedRow& r : rows) by_query[r.query_id].push_back(r);

    std::vector<std::size_t> relevant_count(queries.n_classes, 0);
    for (std::uint32_t l : db.labels) {
        if (l < relevant_count.size()) ++relevant_count[l];
    }

    std::vector<double> aps;
    std::vector<std::vector<double>> p_at(at.size());
    std::vector<std::vector<opqn::PrPoint>> curves;
    std::size_t skipped = 0;
    for (const auto& [qid, ranked] : by_query) {
        if (qid >= queries.count) throw std::runtime_error("ranking references unknown query id");
        const std::uint32_t qlabel = queries.labels[qid];
        std::vector<std::uint8_t> flags(ranked.size());
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            if (ranked[i].db_id >= db.count) {
                throw std::runtime_error("ranking references unknown database id");
            }
            flags[i] = db.labels[ranked[i].db_id] == qlabel ? 1 : 0;
        }
        const std::size_t total = relevant_count[qlabel];
        if (total == 0) {
            ++skipped;
            continue;
        }
        aps.push_back(opqn::average_precision(flags, total));
        for (std::size_t t = 0; t < at.size(); ++t) {
            p_at[t].push_back(opqn::precision_at_t(flags, at[t]));
        }
        if (!pr_out.empty()) curves.push_back(opqn::pr_curve(flags, total, pr_points));
    }
    if (aps.empty()) throw std::runtime_error("no query with relevant database items");

    AtomicOutput guard(out);
    {
        std::ofstream os(guard.tmp());
        if (!os) throw std::runtime_error("cannot open for writing: " + out);
        os << "metric,value\n";
        os << "map," << fmt(opqn::mean_average_precision(aps)) << '\n';
        for (std::size_t t = 0; t < at.size(); ++t) {
            os << "p@" << at[t] << ',' << fmt(opqn::mean_average_precision(p_at[t])) << '\n';
        }
        os << "valid_queries," << aps.size() << '\n';
        os << "queries_without_relevant," << skipped << '\n';
    }

    if (!pr_out.empty()) {
        for (const auto& c : curves) {
            if (c.size() != curves.front().size()) {
                throw std::runtime_error("rankings differ in length; cannot average PR curves");
            }
        }
        AtomicOutput pr_guard(pr_out);
        {
            std::ofstream os(pr_guard.tmp());
            if (!os) throw std::runtime_error("cannot open for writing: " + pr_out);
            os << "recall,precision\n";
            for (std::size_t j = 0; j < curves.front().size(); ++j) {
                double rec = 0.0, prec = 0.0;
                for (const auto& c : curves) {
                    rec += c[j].recall;
                    prec += c[j].precision;
                }
                os << fmt(rec / double(curves.size())) << ',' << fmt(prec / double(curves.size()))
                   << '\n';
            }
        }
        pr_guard.commit();
    }
    guard.commit();
    std::cout << "map: " << fmt(opqn::mean_average_precision(aps)) << " over " << aps.size()
              << " queries\n";
    return 0;
}

int cmd_angles(const std::string& codebook_path, double bin_width, const std::string& out) {
    const opqn::CodebookSet set = opqn::load_codebooks(codebook_path);
    const opqn::AngularHistogram hist = opqn::angular_histogram(set, bin_width);
    AtomicOutput guard(out);
    {
        std::ofstream os(guard.tmp());
        if (!os) throw std::runtime_error("cannot open for writing: " + out);
        os << "bin_start_deg,frequency\n";
        for (std::size_t b = 0; b < hist.counts.size(); ++b) {
            os << fmt(double(b) * hist.bin_width_deg) << ',' << fmt(hist.counts[b]) << '\n';
        }
    }
    guard.commit();
    std::size_t nonzero = 0;
    for (double c : hist.counts) nonzero += c > 0.0 ? 1 : 0;
    std::cout << "histogram: " << hist.counts.size() << " bins, " << nonzero << " nonzero\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"orthonormal product-quantization training and retrieval"};
    app.require_subcommand(1);
    app.set_config("--config", "", "config file with key=value lines (flags take precedence)");

    int threads = 0;
    app.add_option("--threads", threads, "worker threads (0 = hardware default)");

    std::function<int()> run;

    {
        auto* c = app.add_subcommand("gen-codebook", "generate deterministic orthonormal codebooks");
        auto m = std::make_shared<std::uint32_t>(8);
        auto d = std::make_shared<std::uint32_t>(64);
        auto k = std::make_shared<std::uint32_t>(64);
        auto variance = std::make_shared<double>(0.0);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto out = std::make_shared<std::string>();
        c->add_option("--m", *m, "number of codebooks")->required();
        c->add_option("--d", *d, "sub-vector dimension")->required();
        c->add_option("--k", *k, "codewords per codebook (power of two, <= d)")->required();
        c->add_option("--perturb", *variance, "Gaussian noise variance added to every entry");
        c->add_option("--perturb-seed", *seed, "seed for the perturbation noise");
        c->add_option("--out", *out, "output codebook file")->required();
        c->callback([=, &run] { run = [=] { return cmd_gen_codebook(*m, *d, *k, *variance, *seed, *out); }; });
    }
    {
        auto* c = app.add_subcommand("synth", "generate a synthetic clustered embedding dataset");
        auto cfg = std::make_shared<opqn::SyntheticConfig>();
        auto out = std::make_shared<std::string>();
        c->add_option("--classes", cfg->classes, "number of classes")->required();
        c->add_option("--per-class", cfg->per_class, "samples per class")->required();
        c->add_option("--dim", cfg->dim, "feature dimension")->required();
        c->add_option("--sigma", cfg->noise_sigma, "per-coordinate noise sigma");
        c->add_option("--seed", cfg->seed, "generator seed");
        c->add_option("--out", *out, "output embedding file")->required();
        c->callback([=, &run] { run = [=] { return cmd_synth(*cfg, *out); }; });
    }
    {
        auto* c = app.add_subcommand("split", "split a dataset into database and query files");
        auto data = std::make_shared<std::string>();
        auto qpc = std::make_shared<std::uint32_t>(10);
        auto unseen = std::make_shared<double>(0.0);
        auto train_out = std::make_shared<std::string>();
        auto db_out = std::make_shared<std::string>();
        auto queries_out = std::make_shared<std::string>();
        c->add_option("--data", *data, "input embedding file")->required();
        c->add_option("--queries-per-class", *qpc, "queries taken from each class");
        c->add_option("--unseen-fraction", *unseen,
                      "class fraction reserved for training (enables the class-disjoint protocol)");
        c->add_option("--train-out", *train_out, "training set (class-disjoint protocol only)");
        c->add_option("--db-out", *db_out, "database output file")->required();
        c->add_option("--queries-out", *queries_out, "queries output file")->required();
        c->callback([=, &run] {
            run = [=] { return cmd_split(*data, *qpc, *unseen, *train_out, *db_out, *queries_out); };
        });
    }
    {
        auto* c = app.add_subcommand("train", "train the quantization head on an embedding file");
        auto cfg = std::make_shared<opqn::TrainConfig>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto log = std::make_shared<std::string>();
        auto codebook = std::make_shared<std::string>();
        auto mode = std::make_shared<std::string>("orthonormal");
        auto no_lx = std::make_shared<bool>(false);
        auto no_ent = std::make_shared<bool>(false);
        c->add_option("--data", *data, "training embedding file")->required();
        c->add_option("--out", *out, "output checkpoint file")->required();
        c->add_option("--log", *log, "training log CSV (default: <out>.log.csv)");
        c->add_option("--m", cfg->m_books, "number of codebooks");
        c->add_option("--d", cfg->sub_dim, "sub-vector dimension");
        c->add_option("--k", cfg->k_words, "codewords per codebook");
        c->add_option("--epochs", cfg->epochs, "training epochs");
        c->add_option("--batch", cfg->batch_size, "minibatch size");
        c->add_option("--lr", cfg->lr.initial, "initial learning rate");
        c->add_option("--lr-decay", cfg->lr.decay, "learning-rate decay factor");
        c->add_option("--lr-period", cfg->lr.period, "epochs between decays");
        c->add_option("--r", cfg->hp.scale_r, "cosine scale");
        c->add_option("--u", cfg->hp.margin_u, "cosine margin");
        c->add_option("--lambda", cfg->hp.entropy_weight, "entropy regularizer weight");
        c->add_flag("--no-lx", *no_lx, "train on soft quantizations only");
        c->add_flag("--no-entropy", *no_ent, "drop the entropy term from the objective");
        c->add_option("--momentum", cfg->momentum, "SGD momentum");
        c->add_option("--weight-decay", cfg->weight_decay, "weight decay on encoder and transforms");
        c->add_option("--seed", cfg->seed, "training seed");
        c->add_option("--mode", *mode, "orthonormal | l2q")
            ->check(CLI::IsMember({"orthonormal", "l2q"}));
        c->add_option("--codebook", *codebook, "use this codebook file instead of generating one");
        c->callback([=, &run] {
            run = [=] {
                opqn::TrainConfig final_cfg = *cfg;
                final_cfg.flags.include_lx = !*no_lx;
                final_cfg.flags.include_lent = !*no_ent;
                final_cfg.mode = (*mode == "l2q") ? opqn::ModelParams::Mode::l2q
                                                  : opqn::ModelParams::Mode::orthonormal;
                return cmd_train(*data, final_cfg, *codebook, *out, *log);
            };
        });
    }
    {
        auto* c = app.add_subcommand("encode", "encode an embedding file into PQ codes");
        auto model = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        c->add_option("--model", *model, "checkpoint file")->required();
        c->add_option("--data", *data, "embedding file to encode")->required();
        c->add_option("--out", *out, "output database file")->required();
        c->callback([=, &run] { run = [=] { return cmd_encode(*model, *data, *out); }; });
    }
    {
        auto* c = app.add_subcommand("query", "rank an encoded database for each query");
        auto model = std::make_shared<std::string>();
        auto db = std::make_shared<std::string>();
        auto queries = std::make_shared<std::string>();
        auto topk = std::make_shared<std::uint32_t>(10);
        auto out = std::make_shared<std::string>();
        c->add_option("--model", *model, "checkpoint file")->required();
        c->add_option("--db", *db, "encoded database file")->required();
        c->add_option("--queries", *queries, "query embedding file")->required();
        c->add_option("--topk", *topk, "results per query");
        c->add_option("--out", *out, "output ranking CSV")->required();
        c->callback([=, &run] { run = [=] { return cmd_query(*model, *db, *queries, *topk, *out); }; });
    }
    {
        auto* c = app.add_subcommand("eval", "retrieval metrics for a ranking CSV");
        auto ranking = std::make_shared<std::string>();
        auto queries = std::make_shared<std::string>();
        auto db = std::make_shared<std::string>();
        auto at = std::make_shared<std::vector<std::uint32_t>>();
        auto points = std::make_shared<std::uint32_t>(100);
        auto pr_out = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        c->add_option("--ranking", *ranking, "ranking CSV from the query command")->required();
        c->add_option("--queries", *queries, "query embedding file (labels)")->required();
        c->add_option("--db", *db, "encoded database file (labels)")->required();
        c->add_option("--t", *at, "T values for precision@T");
        c->add_option("--points", *points, "PR curve resolution");
        c->add_option("--pr-out", *pr_out, "write the mean PR curve to this CSV");
        c->add_option("--out", *out, "output metrics CSV")->required();
        c->callback([=, &run] {
            run = [=] { return cmd_eval(*ranking, *queries, *db, *at, *points, *pr_out, *out); };
        });
    }
    {
        auto* c = app.add_subcommand("angles", "codeword pair-angle histogram of a codebook file");
        auto codebook = std::make_shared<std::string>();
        auto bin = std::make_shared<double>(0.5);
        auto out = std::make_shared<std::string>();
        c->add_option("--codebook", *codebook, "codebook file")->required();
        c->add_option("--bin-width", *bin, "histogram bin width in degrees");
        c->add_option("--out", *out, "output histogram CSV")->required();
        c->callback([=, &run] { run = [=] { return cmd_angles(*codebook, *bin, *out); }; });
    }

    CLI11_PARSE(app, argc, argv);

    try {
        opqn::set_threads(threads);
        return run ? run() : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
