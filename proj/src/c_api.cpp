#include "lm2d/lm2d.h"

#include <spdlog/spdlog.h>

#include <cstring>
#include <new>
#include <string>

#include "lm2d/config.hpp"
#include "lm2d/dataio.hpp"
#include "lm2d/error.hpp"
#include "lm2d/pipeline.hpp"
#include "lm2d/skeleton.hpp"

struct lm2d_config {
  lm2d::RunConfig config;
};

struct lm2d_motion {
  lm2d::MotionSequence motion;
};

namespace {

thread_local std::string g_last_error;

lm2d_status fail(lm2d_status status, const char* what) {
  g_last_error = what;
  return status;
}

template <typename F>
lm2d_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return LM2D_OK;
  } catch (const lm2d::Error& e) {
    return fail(static_cast<lm2d_status>(e.kind()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(LM2D_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LM2D_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(LM2D_ERR_INTERNAL, "unknown error");
  }
}

void require(const void* p, const char* name) {
  if (!p) throw lm2d::UsageError(std::string(name) + " must not be NULL");
}

void copy_out(const std::string& s, char* buf, size_t size, size_t* needed) {
  if (needed) *needed = s.size();
  if (buf && size > 0) {
    const size_t n = std::min(size - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
}

const lm2d::MotionSequence& motion_of(const lm2d_motion* m) {
  require(m, "motion");
  return m->motion;
}

lm2d::JointPositions frame_positions(const lm2d::MotionSequence& motion, int frame) {
  if (frame < 0 || frame >= motion.frame_count())
    throw lm2d::UsageError("frame " + std::to_string(frame) + " is out of range [0, " +
                           std::to_string(motion.frame_count()) + ")");
  const Eigen::Matrix<double, 1, lm2d::kPoseDim> pose = motion.frames.row(frame).cast<double>();
  return lm2d::forward_kinematics(lm2d::Skeleton::canonical(), std::span<const double>(pose.data(), pose.size()));
}

}  // namespace

extern "C" {

const char* lm2d_version(void) { return "1.0.0"; }

const char* lm2d_last_error(void) { return g_last_error.c_str(); }

lm2d_status lm2d_set_log_level(const char* level) {
  return guarded([&] {
    require(level, "level");
    const spdlog::level::level_enum l = spdlog::level::from_str(level);
    if (l == spdlog::level::off && std::strcmp(level, "off") != 0)
      throw lm2d::UsageError(std::string("unknown log level '") + level + "'");
    spdlog::set_level(l);
  });
}

lm2d_status lm2d_config_create(lm2d_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new lm2d_config();
  });
}

void lm2d_config_destroy(lm2d_config* config) { delete config; }

lm2d_status lm2d_config_load_file(lm2d_config* config, const char* path) {
  return guarded([&] {
    require(config, "config");
    require(path, "path");
    config->config.merge_file(path);
  });
}

lm2d_status lm2d_config_set(lm2d_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    config->config.set(key, value);
  });
}

lm2d_status lm2d_config_get(const lm2d_config* config, const char* key, char* buf, size_t size, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    copy_out(config->config.get(key), buf, size, needed);
  });
}

lm2d_status lm2d_config_render(const lm2d_config* config, char* buf, size_t size, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    copy_out(config->config.render(), buf, size, needed);
  });
}

lm2d_status lm2d_config_digest(const lm2d_config* config, char* buf, size_t size, size_t* needed) {
  return guarded([&] {
    require(config, "config");
    copy_out(config->config.digest(), buf, size, needed);
  });
}

lm2d_status lm2d_make_synthetic(const lm2d_config* config, const char* out_dir) {
  return guarded([&] {
    require(config, "config");
    require(out_dir, "out_dir");
    lm2d::pipeline::make_synthetic(config->config, out_dir);
  });
}

lm2d_status lm2d_extract_features(const lm2d_config* config, const char* manifest, const char* out_dir) {
  return guarded([&] {
    require(config, "config");
    require(manifest, "manifest");
    require(out_dir, "out_dir");
    lm2d::pipeline::extract_features(config->config, manifest, out_dir);
  });
}

lm2d_status lm2d_train(const lm2d_config* config, const char* manifest, const char* out_dir) {
  return guarded([&] {
    require(config, "config");
    require(manifest, "manifest");
    require(out_dir, "out_dir");
    lm2d::pipeline::train(config->config, manifest, out_dir);
  });
}

lm2d_status lm2d_distill(const lm2d_config* config, const char* manifest, const char* teacher, const char* out_dir) {
  return guarded([&] {
    require(config, "config");
    require(manifest, "manifest");
    require(teacher, "teacher");
    require(out_dir, "out_dir");
    lm2d::pipeline::distill(config->config, manifest, teacher, out_dir);
  });
}

lm2d_status lm2d_sample(const lm2d_config* config, const char* manifest, const char* checkpoint, int one_step,
                        const char* out_dir) {
  return guarded([&] {
    require(config, "config");
    require(manifest, "manifest");
    require(checkpoint, "checkpoint");
    require(out_dir, "out_dir");
    lm2d::pipeline::sample(config->config, manifest, checkpoint, one_step != 0, out_dir);
  });
}

lm2d_status lm2d_train_encoder(const lm2d_config* config, const char* manifest, const char* out_dir) {
  return guarded([&] {
    require(config, "config");
    require(manifest, "manifest");
    require(out_dir, "out_dir");
    lm2d::pipeline::train_encoder(config->config, manifest, out_dir);
  });
}

lm2d_status lm2d_evaluate(const lm2d_config* config, const char* manifest, const char* samples_dir,
                          const char* encoder, const char* out_dir) {
  return guarded([&] {
    require(config, "config");
    require(manifest, "manifest");
    require(samples_dir, "samples_dir");
    require(out_dir, "out_dir");
    lm2d::pipeline::evaluate(config->config, manifest, samples_dir, encoder ? encoder : "", out_dir);
  });
}

lm2d_status lm2d_motion_load(const char* path, lm2d_motion** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new lm2d_motion{lm2d::load_motion(path)};
  });
}

void lm2d_motion_destroy(lm2d_motion* motion) { delete motion; }

int lm2d_motion_frames(const lm2d_motion* motion) { return motion ? motion->motion.frame_count() : 0; }

double lm2d_motion_fps(const lm2d_motion* motion) { return motion ? motion->motion.fps : 0.0; }

lm2d_status lm2d_motion_pose(const lm2d_motion* motion, int frame, double* out147) {
  return guarded([&] {
    const lm2d::MotionSequence& m = motion_of(motion);
    require(out147, "out");
    if (frame < 0 || frame >= m.frame_count())
      throw lm2d::UsageError("frame " + std::to_string(frame) + " is out of range");
    for (int j = 0; j < lm2d::kPoseDim; ++j) out147[j] = m.frames(frame, j);
  });
}

lm2d_status lm2d_motion_positions(const lm2d_motion* motion, int frame, double* out72) {
  return guarded([&] {
    const lm2d::MotionSequence& m = motion_of(motion);
    require(out72, "out");
    const lm2d::JointPositions p = frame_positions(m, frame);
    for (int j = 0; j < lm2d::kJointCount; ++j)
      for (int k = 0; k < 3; ++k) out72[3 * j + k] = p(j, k);
  });
}

lm2d_status lm2d_motion_bone_error(const lm2d_motion* motion, double* out) {
  return guarded([&] {
    const lm2d::MotionSequence& m = motion_of(motion);
    require(out, "out");
    const lm2d::Skeleton& skel = lm2d::Skeleton::canonical();
    double worst = 0.0;
    for (int f = 0; f < m.frame_count(); ++f) {
      const lm2d::JointPositions p = frame_positions(m, f);
      for (int j = 1; j < lm2d::kJointCount; ++j) {
        const double len = (p.row(j) - p.row(skel.parent(j))).norm();
        worst = std::max(worst, std::abs(len - skel.rest_offset(j).norm()));
      }
    }
    *out = worst;
  });
}

}  // extern "C"
