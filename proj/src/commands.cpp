#include "gads/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <png.h>

#include "gads/binary_io.hpp"
#include "gads/checkpoint.hpp"
#include "gads/error.hpp"

namespace gads::cli {

namespace {

inline constexpr char kPredictionMagic[8] = {'G', 'A', 'D', 'S', 'P', 'R', '0', '1'};
inline constexpr std::uint32_t kPredictionVersion = 1;

void require_file(const std::filesystem::path& p, const char* flag) {
  if (p.empty()) throw ArgumentError(std::string("missing required ") + flag);
  if (!std::filesystem::is_regular_file(p)) throw IoError(std::string(flag) + " does not exist: " + p.string());
}

void require_out(const std::filesystem::path& p) {
  if (p.empty()) throw ArgumentError("missing required --out");
  std::filesystem::create_directories(p);
}

BankSource make_banks(const RunConfig& cfg, const FeatureSet& pool, std::uint64_t seed) {
  if (!cfg.prompt_ids.empty()) return prompts_from_ids(pool, cfg.prompt_ids);
  if (cfg.bank_scope == BankScope::whole_set) return sample_prompts(pool, cfg.shots, seed);
  return sample_prompts_by_class(pool, cfg.shots, seed);
}

std::string pm(const std::map<std::string, Aggregate>& agg, const std::string& key) {
  auto it = agg.find(key);
  if (it == agg.end()) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(1) << 100.0 * it->second.mean << "±" << 100.0 * it->second.std;
  return s.str();
}

// Left-justify counting code points, so "±" takes one column.
std::string pad(const std::string& text, std::size_t width) {
  std::size_t columns = 0;
  for (unsigned char c : text) columns += (c & 0xC0) != 0x80;
  return columns >= width ? text + " " : text + std::string(width - columns, ' ');
}

}  // namespace

std::string file_safe(const std::string& id) {
  std::string out = id;
  for (char& c : out) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                    c == '_' || c == '.';
    if (!ok) c = '_';
  }
  return out.empty() ? "_" : out;
}

std::filesystem::path seed_dir(const std::filesystem::path& out, std::uint64_t seed) {
  return out / ("seed_" + std::to_string(seed));
}

InferenceConfig inference_config(const RunConfig& cfg, const FeatureSet& set) {
  InferenceConfig ic;
  ic.alpha = cfg.train.alpha;
  ic.beta = cfg.train.beta;
  ic.tau = cfg.train.tau;
  ic.layers = resolve_layers(cfg.train, set);
  ic.validate();
  return ic;
}

void write_scores_csv(const std::vector<AnomalyOutput>& outputs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "id,score\n";
  char buf[64];
  for (const auto& o : outputs) {
    std::snprintf(buf, sizeof(buf), "%.9g", o.score);
    out << o.id << ',' << buf << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> quantize_map(const Grid& map) {
  std::vector<std::uint8_t> px(map.size());
  for (std::size_t k = 0; k < map.size(); ++k) {
    px[k] = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(map.values[k], 0.0, 1.0)));
  }
  return px;
}

void write_pgm(const Grid& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P5\n" << map.cols << ' ' << map.rows << "\n255\n";
  const auto px = quantize_map(map);
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_png(const Grid& map, const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(map.cols), static_cast<png_uint_32>(map.rows), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto px = quantize_map(map);
  for (std::size_t r = 0; r < map.rows; ++r) png_write_row(png, px.data() + r * map.cols);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void write_predictions(const std::vector<AnomalyOutput>& outputs, const std::filesystem::path& path) {
  io::Writer out(path);
  out.bytes(kPredictionMagic, 8);
  out.put(kPredictionVersion);
  out.put(static_cast<std::uint64_t>(outputs.size()));
  for (const auto& o : outputs) {
    out.put_string16(o.id);
    out.put_f64(o.score);
    out.put(static_cast<std::uint32_t>(o.map.rows));
    out.put(static_cast<std::uint32_t>(o.map.cols));
    out.put_f64s(o.map.values);
  }
  out.close();
}

std::vector<AnomalyOutput> read_predictions(const std::filesystem::path& path) {
  io::Reader in(path);
  if (!in.match_magic(kPredictionMagic)) throw FormatError("not a predictions file (bad magic): " + path.string());
  if (in.get<std::uint32_t>() != kPredictionVersion) throw FormatError("unsupported predictions version");
  const auto count = in.get<std::uint64_t>();
  std::vector<AnomalyOutput> outputs;
  for (std::uint64_t n = 0; n < count; ++n) {
    AnomalyOutput o;
    o.id = in.get_string16();
    o.score = in.get_f64();
    const auto rows = in.get<std::uint32_t>();
    const auto cols = in.get<std::uint32_t>();
    o.map = Grid(rows, cols);
    in.get_f64s(o.map.values, static_cast<std::size_t>(rows) * cols);
    outputs.push_back(std::move(o));
  }
  if (in.remaining() != 0) throw CorruptFileError("trailing bytes in " + path.string());
  return outputs;
}

std::map<std::string, Aggregate> aggregate_reports(const std::vector<metrics::EvalReport>& reports) {
  std::map<std::string, std::vector<double>> values;
  auto collect = [&](const std::string& prefix, const metrics::MetricSet& m) {
    if (m.image_auroc) values[prefix + "/image_auroc"].push_back(*m.image_auroc);
    if (m.image_ap) values[prefix + "/image_ap"].push_back(*m.image_ap);
    if (m.pixel_auroc) values[prefix + "/pixel_auroc"].push_back(*m.pixel_auroc);
    if (m.pixel_pro) values[prefix + "/pixel_pro"].push_back(*m.pixel_pro);
  };
  for (const auto& r : reports) {
    collect("overall", r.overall);
    collect("mean", r.dataset_mean);
    for (const auto& [name, m] : r.per_dataset) collect(name, m);
  }
  std::map<std::string, Aggregate> out;
  for (const auto& [key, v] : values) {
    Aggregate a;
    a.runs = v.size();
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(v.size()));
    out.emplace(key, a);
  }
  return out;
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.features, "--features");
  require_file(cfg.protos, "--protos");
  if (cfg.ckpt.empty()) throw ArgumentError("missing required --ckpt");
  cfg.train.validate();
  const FeatureSet trainset = read_feature_file(cfg.features);
  const TextPrototypes protos = read_prototype_file(cfg.protos);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();

  log << "training on " << trainset.records.size() << " records, " << tc.epochs << " epochs, batch " << tc.batch
      << ", lr " << tc.lr << ", seed " << tc.seed << "\n";
  const TrainResult result = train(trainset, protos, tc, [&](const StepRecord& r, const AdapterParams&) {
    if ((r.step + 1) % 10 == 0) log << "  step " << r.step + 1 << "  dasl " << r.dasl_loss << "  oasl " << r.oasl_loss << "\n";
  });
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    log << "final losses: dasl " << last.dasl_loss << ", oasl " << last.oasl_loss << "\n";
  } else {
    log << "no training steps run; writing initialization\n";
  }
  if (cfg.ckpt.has_parent_path()) std::filesystem::create_directories(cfg.ckpt.parent_path());
  write_checkpoint(result.params, cfg.ckpt);
  log << "checkpoint written to " << cfg.ckpt.string() << "\n";
}

void cmd_infer(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.ckpt, "--ckpt");
  require_file(cfg.test_features, "--test-features");
  require_file(cfg.protos, "--protos");
  if (!cfg.prompts.empty()) require_file(cfg.prompts, "--prompts");
  require_out(cfg.out);
  if (cfg.shots < 1) throw ArgumentError("--shots must be at least 1");

  const AdapterParams params = read_checkpoint(cfg.ckpt);
  const FeatureSet test = read_feature_file(cfg.test_features);
  const FeatureSet pool = cfg.prompts.empty() ? test : read_feature_file(cfg.prompts);
  const TextPrototypes protos = read_prototype_file(cfg.protos);
  const InferenceConfig ic = inference_config(cfg, test);

  for (std::uint64_t seed : cfg.seeds) {
    const BankSource banks = make_banks(cfg, pool, seed);
    const auto outputs = infer_all(test, banks, params, protos, ic);
    const auto dir = seed_dir(cfg.out, seed);
    std::filesystem::create_directories(dir / "maps");
    write_scores_csv(outputs, dir / "scores.csv");
    write_predictions(outputs, dir / "predictions.gpr");
    for (const auto& o : outputs) {
      if (cfg.map_format == MapFormat::png) {
        write_png(o.map, dir / "maps" / (file_safe(o.id) + ".png"));
      } else {
        write_pgm(o.map, dir / "maps" / (file_safe(o.id) + ".pgm"));
      }
    }
    log << "seed " << seed << ": scored " << outputs.size() << " records -> " << dir.string() << "\n";
  }
}

void cmd_eval(const RunConfig& cfg, std::ostream& log) {
  require_file(cfg.test_features, "--test-features");
  if (cfg.predictions.empty()) throw ArgumentError("missing required --pred (one per run)");
  for (const auto& p : cfg.predictions) require_file(p / "predictions.gpr", "--pred");
  require_out(cfg.out);

  const FeatureSet test = read_feature_file(cfg.test_features);
  std::vector<metrics::EvalReport> reports;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& p : cfg.predictions) {
    const auto outputs = read_predictions(p / "predictions.gpr");
    reports.push_back(metrics::evaluate(outputs, test.records));
    nlohmann::json r = metrics::to_json(reports.back());
    r["source"] = p.string();
    runs.push_back(r);
    log << "run " << p.string() << "\n" << metrics::to_text(reports.back());
  }
  const auto agg = aggregate_reports(reports);
  nlohmann::json agg_json = nlohmann::json::object();
  for (const auto& [key, a] : agg) agg_json[key] = {{"mean", a.mean}, {"std", a.std}, {"runs", a.runs}};

  nlohmann::json doc;
  doc["runs"] = runs;
  doc["aggregate"] = agg_json;
  {
    std::ofstream out(cfg.out / "eval.json", std::ios::trunc);
    if (!out) throw IoError("cannot write eval.json");
    out << doc.dump(2) << "\n";
  }

  std::ostringstream table;
  table << pad("dataset", 20) << pad("image (AUROC, AP)", 28) << "pixel (AUROC, PRO)\n";
  std::vector<std::string> names;
  for (const auto& [name, m] : reports.front().per_dataset) names.push_back(name);
  names.push_back("mean");
  names.push_back("overall");
  for (const auto& name : names) {
    const std::string img = "(" + pm(agg, name + "/image_auroc") + ", " + pm(agg, name + "/image_ap") + ")";
    const std::string pix = "(" + pm(agg, name + "/pixel_auroc") + ", " + pm(agg, name + "/pixel_pro") + ")";
    table << pad(name, 20) << pad(img, 28) << pix << "\n";
  }
  {
    std::ofstream out(cfg.out / "eval.txt", std::ios::trunc);
    if (!out) throw IoError("cannot write eval.txt");
    out << table.str();
  }
  log << "aggregate over " << reports.size() << " run(s)\n" << table.str();
}

void cmd_synth(const RunConfig& cfg, std::ostream& log) {
  require_out(cfg.out);
  SynthConfig sc = cfg.synth;
  sc.seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
  const SynthData data = generate_synthetic(sc);
  write_feature_file(data.train, cfg.out / "train.gft");
  write_feature_file(data.test, cfg.out / "test.gft");
  write_feature_file(data.pool, cfg.out / "pool.gft");
  write_prototype_file(data.protos, cfg.out / "protos.gtp");
  log << "wrote " << data.train.records.size() << " train, " << data.test.records.size() << " test and "
      << data.pool.records.size() << " pool records to " << cfg.out.string() << "\n";
}

}  // namespace gads::cli
