// SPDX-License-Identifier: Apache-2.0
//
// Regenerates the committed test fixtures. Run from the build tree with the
// fixtures directory as the only argument; outputs are deterministic.
#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "d2quant/eval.hpp"
#include "d2quant/model.hpp"
#include "d2quant/pipeline.hpp"
#include "d2quant/report.hpp"
#include "test_support.hpp"

using namespace d2quant;
using nlohmann::json;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.d_ffn = 128;
  cfg.max_seq = 256;
  return cfg;
}

void write(const std::string& path, const json& doc) {
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
  std::cout << "wrote " << path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <fixtures-dir>\n";
    return 2;
  }
  const std::string dir = argv[1];

  // calibration / evaluation text: skewed pseudo-text, 96 KiB
  {
    Rng rng(1234);
    const auto text = d2q_test::pseudo_text(rng, 96 * 1024);
    std::ofstream out(dir + "/calib.txt", std::ios::binary);
    out.write(reinterpret_cast<const char*>(text.data()),
              static_cast<std::streamsize>(text.size()));
    std::cout << "wrote " << dir << "/calib.txt\n";
  }

  // golden logits for the seeded toy model
  {
    const ModelConfig cfg = toy_config();
    const std::uint64_t seed = 42;
    const ModelBundle m = init_random(cfg, seed);
    std::vector<std::uint8_t> tokens;
    for (char c : std::string("the quick brown fox jumps over the lazy dog"))
      tokens.push_back(static_cast<std::uint8_t>(c));
    const Matrix logits = model_forward(m, tokens);

    json doc;
    doc["config"] = {{"n_layers", cfg.n_layers}, {"d_model", cfg.d_model},
                     {"n_heads", cfg.n_heads},   {"d_ffn", cfg.d_ffn},
                     {"max_seq", cfg.max_seq}};
    doc["seed"] = seed;
    doc["tokens"] = tokens;
    json rows = json::array();
    for (std::size_t t = 0; t < logits.rows(); ++t) {
      json row = json::array();
      for (std::size_t j = 0; j < logits.cols(); ++j)
        row.push_back(static_cast<double>(logits(t, j)));
      rows.push_back(std::move(row));
    }
    doc["logits"] = std::move(rows);
    write(dir + "/golden_logits.json", doc);
  }

  // golden perplexity of the same model over fixture text
  {
    const ModelBundle m = init_random(toy_config(), 42);
    Rng rng(777);
    const auto text = d2q_test::pseudo_text(rng, 512);
    const EvalResult r = evaluate_text(m, text, 128);
    json doc;
    doc["seed"] = 42;
    doc["seq_len"] = 128;
    doc["text_seed"] = 777;
    doc["text_len"] = 512;
    doc["perplexity"] = r.perplexity;
    doc["mean_nll"] = r.mean_nll;
    doc["token_count"] = r.token_count;
    write(dir + "/golden_eval.json", doc);
  }

  // committed report document for the schema check
  {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.d_ffn = 64;
    cfg.max_seq = 64;
    const ModelBundle m = init_random(cfg, 5);

    Rng rng(99);
    CalibrationSet calib;
    for (int s = 0; s < 4; ++s) calib.sequences.push_back(d2q_test::pseudo_text(rng, 32));

    PipelineConfig pcfg;
    pcfg.quant = {.bits = 4, .group_size = 16};
    pcfg.calib_samples = 4;
    pcfg.calib_seq_len = 32;
    pcfg.seed = 5;
    const PipelineResult res = run_d2quant(m, calib, pcfg);
    write(dir + "/report_schema.json", report_to_json(res.report));
  }
  return 0;
}
