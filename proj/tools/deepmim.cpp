// SPDX-License-Identifier: Apache-2.0
// Command-line entry point. Every failure ends in a single stderr line
// "error: <kind>: <message>" and a nonzero exit code.
#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "deepmim/commands.hpp"

using namespace deepmim;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kIo = 3, kDimension = 4, kNumeric = 5 };

int fail(const char* kind, std::string message, int code) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  std::cerr << "error: " << kind << ": " << message << '\n';
  return code;
}

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> seed;
  std::optional<std::string> out;
  std::optional<std::string> taps;
  std::optional<std::string> alpha_schedule;
  std::optional<std::string> mask_ratio;
  std::optional<std::string> freeze_first_k;
  std::optional<std::string> reinit_last_k;
  bool shared_decoder = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "run configuration file (key = value lines)");
  cmd->add_option("--seed", f.seed, "overrides the configured seed");
  cmd->add_option("--out", f.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked image modeling with deep supervision"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen-data", "write a synthetic image set (seed selects the data)");
  add_common(gen, f);
  auto* pre = app.add_subcommand("pretrain", "masked pre-training");
  add_common(pre, f);
  pre->add_option("--taps", f.taps, "tap blocks, e.g. 2,3 or none or default");
  pre->add_option("--alpha-schedule", f.alpha_schedule, "per-decoder blending ratios, final last, e.g. 0,1/3,2/3,1");
  pre->add_option("--mask-ratio", f.mask_ratio, "fraction of masked patches");
  pre->add_flag("--shared-decoder", f.shared_decoder, "one decoder shared by all taps");
  auto* fine = app.add_subcommand("finetune", "supervised fine-tuning of a checkpoint");
  add_common(fine, f);
  fine->add_option("--freeze-first-k", f.freeze_first_k, "freeze patch embedding and the first k blocks");
  fine->add_option("--reinit-last-k", f.reinit_last_k, "re-initialize the last k blocks first");
  auto* probe = app.add_subcommand("probe", "linear probes on frozen block features");
  add_common(probe, f);
  auto* analyze = app.add_subcommand("analyze", "CKA, head similarity and validation loss");
  add_common(analyze, f);
  auto* recon = app.add_subcommand("reconstruct", "write reconstructions of masked images");
  add_common(recon, f);
  recon->add_option("--mask-ratio", f.mask_ratio, "fraction of masked patches");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kConfig);
  }

  try {
    KeyValues overrides;
    auto put = [&](const char* key, const std::optional<std::string>& v, const char* flag) {
      if (v) overrides[key] = {*v, flag};
    };
    put(gen->parsed() ? "data_seed" : "seed", f.seed, "--seed");
    put("out_dir", f.out, "--out");
    put("taps", f.taps, "--taps");
    put("alpha_schedule", f.alpha_schedule, "--alpha-schedule");
    put("mask_ratio", f.mask_ratio, "--mask-ratio");
    put("freeze_first_k", f.freeze_first_k, "--freeze-first-k");
    put("reinit_last_k", f.reinit_last_k, "--reinit-last-k");
    if (f.shared_decoder) overrides["shared_decoder"] = {"true", "--shared-decoder"};
    const RunConfig rc = load_run_config(f.config, overrides);

    if (gen->parsed()) {
      const auto data = cmd_gen_data(rc);
      std::printf("wrote %ld images to %s\n", static_cast<long>(data.size()), rc.out_dir.c_str());
    } else if (pre->parsed()) {
      const auto res = cmd_pretrain(rc);
      if (!res.log.empty()) std::printf("step %ld loss %.6g\n", static_cast<long>(res.log.back().step), res.log.back().total);
    } else if (fine->parsed()) {
      std::printf("accuracy %.6g\n", cmd_finetune(rc).accuracy);
    } else if (probe->parsed()) {
      for (const auto& [layer, acc] : cmd_probe(rc)) std::printf("layer %ld accuracy %.6g\n", static_cast<long>(layer), acc);
    } else if (analyze->parsed()) {
      const auto report = cmd_analyze(rc);
      std::printf("val_loss %.6g\n", report.val_loss.front().second);
    } else if (recon->parsed()) {
      std::printf("wrote %ld reconstructions\n", static_cast<long>(cmd_reconstruct(rc).dim(0)));
    }
    return kOk;
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const IoError& e) {
    return fail("io", e.what(), kIo);
  } catch (const DimensionError& e) {
    return fail("dimension", e.what(), kDimension);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), kNumeric);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), kOther);
  }
}
