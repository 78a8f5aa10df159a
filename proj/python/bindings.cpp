#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <cstring>

#include "mvdp/dense_classifier.hpp"
#include "mvdp/error.hpp"
#include "mvdp/evaluation.hpp"
#include "mvdp/geometry.hpp"
#include "mvdp/pose_regressor.hpp"
#include "mvdp/synth_renderer.hpp"
#include "mvdp/view_aggregation.hpp"

namespace py = pybind11;
using namespace mvdp;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

py::array_t<std::uint8_t> frame_array(const std::vector<std::uint8_t>& v, int h, int w) {
  py::array_t<std::uint8_t> a({h, w});
  std::memcpy(a.mutable_data(), v.data(), v.size());
  return a;
}

DepthFrame depth_from(const U8Array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "depth must be a 2-D uint8 array");
  DepthFrame f(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(f.levels.data(), a.data(), f.levels.size());
  return f;
}

LabelFrame labels_from(const U8Array& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::ShapeMismatch, "labels must be a 2-D uint8 array");
  LabelFrame f(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::memcpy(f.labels.data(), a.data(), f.labels.size());
  return f;
}

py::array_t<float> prob_array(const ProbabilityMap& m) {
  py::array_t<float> a({m.height, m.width, m.channels});
  std::copy(m.values.begin(), m.values.end(), a.mutable_data());
  return a;
}

ProbabilityMap prob_from(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 3) throw Error(ErrorCode::ShapeMismatch, "probabilities must be H x W x C");
  ProbabilityMap m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), static_cast<int>(a.shape(2)));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

Eigen::MatrixXd pose_array(const PoseEstimate& p) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(p.size()), 3);
  for (std::size_t j = 0; j < p.size(); ++j) m.row(static_cast<Eigen::Index>(j)) = p[j].transpose();
  return m;
}

PoseEstimate pose_from(const Eigen::MatrixXd& m) {
  if (m.cols() != 3) throw Error(ErrorCode::DimensionMismatch, "poses must be J x 3");
  PoseEstimate p(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index j = 0; j < m.rows(); ++j) p[static_cast<std::size_t>(j)] = m.row(j).transpose();
  return p;
}

std::vector<PoseEstimate> poses_from(const std::vector<Eigen::MatrixXd>& v) {
  std::vector<PoseEstimate> out;
  for (const auto& m : v) out.push_back(pose_from(m));
  return out;
}

py::dict sample_dict(const Sample& s) {
  py::list views;
  for (const auto& v : s.views) {
    py::dict d;
    d["depth"] = frame_array(v.depth.levels, v.depth.height, v.depth.width);
    d["labels"] = frame_array(v.labels.labels, v.labels.height, v.labels.width);
    d["intrinsics"] = v.camera.intrinsics;
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T.topLeftCorner<3, 3>() = v.camera.camera_to_world.rotation;
    T.topRightCorner<3, 1>() = v.camera.camera_to_world.translation;
    d["camera_to_world"] = T;
    views.append(d);
  }
  py::dict out;
  out["views"] = views;
  out["joints"] = pose_array(s.joints);
  out["posture_id"] = s.posture_id;
  out["character_id"] = s.character_id;
  return out;
}

CameraParams camera_from(const CameraIntrinsics& k, const Eigen::Matrix4d& T) {
  CameraParams c;
  c.intrinsics = k;
  c.camera_to_world.rotation = T.topLeftCorner<3, 3>();
  c.camera_to_world.translation = T.topRightCorner<3, 1>();
  return c;
}

FeatureVector features_from(const Eigen::VectorXd& values, const std::vector<std::uint8_t>& present) {
  FeatureVector f(static_cast<int>(present.size()));
  if (static_cast<std::size_t>(values.size()) != f.values.size()) {
    throw Error(ErrorCode::DimensionMismatch, "feature length must be 24 * len(present)");
  }
  std::copy(values.data(), values.data() + values.size(), f.values.begin());
  f.present = present;
  return f;
}

}  // namespace

PYBIND11_MODULE(_mvdp, m) {
  m.doc() = "Multi-view depth pose pipeline (compiled core)";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init<>())
      .def_static("from_fov", &CameraIntrinsics::from_fov, py::arg("width"), py::arg("height"),
                  py::arg("horizontal_fov_rad"))
      .def_readwrite("focal_x", &CameraIntrinsics::focal_x)
      .def_readwrite("focal_y", &CameraIntrinsics::focal_y)
      .def_readwrite("principal_x", &CameraIntrinsics::principal_x)
      .def_readwrite("principal_y", &CameraIntrinsics::principal_y)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height);

  m.def(
      "project",
      [](const Eigen::Vector3d& p, const CameraIntrinsics& k, const Eigen::Matrix4d& T) {
        const auto pr = project(p, camera_from(k, T));
        return py::make_tuple(Eigen::Vector2d(pr.pixel), pr.depth);
      },
      py::arg("point"), py::arg("intrinsics"), py::arg("camera_to_world"),
      "World point -> (pixel, camera depth).");
  m.def(
      "backproject",
      [](const Eigen::Vector2d& px, double depth, const CameraIntrinsics& k, const Eigen::Matrix4d& T) {
        return Eigen::Vector3d(backproject(px, depth, camera_from(k, T)));
      },
      py::arg("pixel"), py::arg("depth"), py::arg("intrinsics"), py::arg("camera_to_world"));
  m.def(
      "look_at",
      [](const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
        const auto T = look_at(eye, target);
        Eigen::Matrix4d M = Eigen::Matrix4d::Identity();
        M.topLeftCorner<3, 3>() = T.rotation;
        M.topRightCorner<3, 1>() = T.translation;
        return M;
      },
      py::arg("eye"), py::arg("target"), "Camera-to-world 4x4 pose looking from eye at target.");
  m.def(
      "sym_eigenvalues",
      [](const Eigen::Matrix3d& a) {
        const auto e = sym_eigenvalues(SymMat3::from_matrix(a));
        return Eigen::Vector3d(e[0], e[1], e[2]);
      },
      py::arg("matrix"));
  m.def("quantize_depth", &quantize_depth);
  m.def("dequantize_depth", &dequantize_depth);

  m.def(
      "generate_dataset",
      [](const std::string& stage, const std::string& split, std::uint32_t count, int cameras,
         const std::filesystem::path& out_dir, std::uint64_t seed, int size, int sequence_length) {
        auto cfg = DatasetConfig::with_resolution(size);
        cfg.sequence_length = sequence_length;
        py::gil_scoped_release release;
        const auto man = generate_dataset(parse_stage(stage), parse_split(split), count, cameras, out_dir, seed, cfg);
        return man.container_path;
      },
      py::arg("stage"), py::arg("split"), py::arg("count"), py::arg("cameras") = 3, py::arg("out_dir") = ".",
      py::arg("seed") = 1, py::arg("size") = 128, py::arg("sequence_length") = 0,
      "Render a dataset container; returns its path.");

  py::class_<DatasetReader>(m, "DatasetReader")
      .def(py::init<const std::filesystem::path&>())
      .def("__len__", &DatasetReader::size)
      .def_property_readonly("cameras", [](const DatasetReader& r) { return r.header().n_cameras; })
      .def_property_readonly("width", [](const DatasetReader& r) { return r.header().width; })
      .def_property_readonly("height", [](const DatasetReader& r) { return r.header().height; })
      .def("read", [](DatasetReader& r, std::size_t i) { return sample_dict(r.read(i)); }, py::arg("index"));

  m.def(
      "preprocess",
      [](const U8Array& depth, int size) {
        const auto img = preprocess(depth_from(depth), size);
        py::dict d;
        d["levels"] = frame_array(img.levels, img.size, img.size);
        d["scale"] = img.scale;
        d["offset"] = Eigen::Vector2d(img.offset);
        d["depth_shift"] = img.depth_shift();
        d["margin"] = img.margin;
        return d;
      },
      py::arg("depth"), py::arg("size") = 128, "Normalize a depth frame into an S x S network window.");

  py::class_<FcnTopology>(m, "FcnTopology")
      .def(py::init<>())
      .def_readwrite("input_size", &FcnTopology::input_size)
      .def_readwrite("classes", &FcnTopology::classes)
      .def_readwrite("block_channels", &FcnTopology::block_channels)
      .def_readwrite("convs_per_block", &FcnTopology::convs_per_block)
      .def_readwrite("kernel", &FcnTopology::kernel)
      .def_readwrite("fusion_stages", &FcnTopology::fusion_stages)
      .def_readwrite("fusion_kernel", &FcnTopology::fusion_kernel)
      .def_readwrite("final_kernel", &FcnTopology::final_kernel);

  py::class_<Classifier, std::shared_ptr<Classifier>>(m, "Classifier")
      .def_property_readonly("classes", &Classifier::classes)
      .def(
          "classify",
          [](const Classifier& c, const U8Array& depth, std::optional<U8Array> labels, std::uint64_t seed) {
            const auto d = depth_from(depth);
            std::optional<LabelFrame> gt;
            if (labels) gt = labels_from(*labels);
            return prob_array(c.classify(d, gt ? &*gt : nullptr, seed));
          },
          py::arg("depth"), py::arg("labels") = py::none(), py::arg("seed") = 0,
          "H x W x C class probabilities in the frame's pixel coordinates.");
  py::class_<OracleClassifier, Classifier, std::shared_ptr<OracleClassifier>>(m, "OracleClassifier")
      .def(py::init<int, double>(), py::arg("classes") = 44, py::arg("noise_rate") = 0.0);
  py::class_<FcnClassifier, Classifier, std::shared_ptr<FcnClassifier>>(m, "FcnClassifier")
      .def(py::init([](const std::filesystem::path& path) {
             return std::make_shared<FcnClassifier>(std::make_shared<const FcnModel>(load_fcn(path)));
           }),
           py::arg("path"))
      .def_property_readonly("topology", [](const FcnClassifier& c) { return c.model().topology(); })
      .def_property_readonly("parameter_count", [](const FcnClassifier& c) { return c.model().parameter_count(); });
  m.def(
      "load_fcn", [](const std::filesystem::path& p) { return load_fcn(p).topology(); }, py::arg("path"),
      "Topology of a stored classifier (use FcnClassifier to run it).");

  m.def(
      "avg_per_class_accuracy",
      [](const U8Array& pred, const U8Array& gt) { return avg_per_class_accuracy(labels_from(pred), labels_from(gt)); },
      py::arg("predicted"), py::arg("groundtruth"));

  m.def(
      "fuse",
      [](const std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>& probs,
         const std::vector<U8Array>& depths, const std::vector<CameraIntrinsics>& intrinsics,
         const std::vector<Eigen::Matrix4d>& poses, const Eigen::Matrix4d& reference, double threshold) {
        if (probs.size() != depths.size() || depths.size() != intrinsics.size() || depths.size() != poses.size()) {
          throw Error(ErrorCode::ShapeMismatch, "per-view argument lists differ in length");
        }
        std::vector<ProbabilityMap> maps;
        std::vector<DepthFrame> frames;
        for (std::size_t i = 0; i < probs.size(); ++i) {
          maps.push_back(prob_from(probs[i]));
          frames.push_back(depth_from(depths[i]));
        }
        std::vector<FusionView> views;
        for (std::size_t i = 0; i < maps.size(); ++i) {
          views.push_back({&maps[i], &frames[i], camera_from(intrinsics[i], poses[i])});
        }
        RigidTransform ref;
        ref.rotation = reference.topLeftCorner<3, 3>();
        ref.translation = reference.topRightCorner<3, 1>();
        const auto cloud = fuse(views, ref, threshold);
        Eigen::MatrixXd pos(static_cast<Eigen::Index>(cloud.size()), 3);
        py::array_t<std::uint8_t> labels(static_cast<py::ssize_t>(cloud.size()));
        py::array_t<std::uint8_t> cams(static_cast<py::ssize_t>(cloud.size()));
        for (std::size_t i = 0; i < cloud.size(); ++i) {
          pos.row(static_cast<Eigen::Index>(i)) = cloud[i].position.transpose();
          labels.mutable_data()[i] = cloud[i].label;
          cams.mutable_data()[i] = cloud[i].camera;
        }
        return py::make_tuple(pos, labels, cams);
      },
      py::arg("probabilities"), py::arg("depths"), py::arg("intrinsics"), py::arg("camera_to_world"),
      py::arg("reference") = Eigen::Matrix4d::Identity(), py::arg("threshold") = kDefaultProbabilityThreshold,
      "Labeled point cloud as (positions N x 3, labels N, camera N).");

  m.def(
      "extract_features",
      [](const Eigen::MatrixXd& positions, const std::vector<std::uint8_t>& labels, int classes) {
        if (positions.cols() != 3 || static_cast<std::size_t>(positions.rows()) != labels.size()) {
          throw Error(ErrorCode::DimensionMismatch, "positions must be N x 3 with N labels");
        }
        LabeledPointCloud cloud;
        for (std::size_t i = 0; i < labels.size(); ++i) {
          cloud.push_back({positions.row(static_cast<Eigen::Index>(i)).transpose(), labels[i], 1.0f, 0});
        }
        const auto f = extract_features(cloud, classes);
        return py::make_tuple(Eigen::Map<const Eigen::VectorXd>(f.values.data(), static_cast<Eigen::Index>(f.values.size())),
                              f.present);
      },
      py::arg("positions"), py::arg("labels"), py::arg("classes") = 43,
      "Per-class statistics vector (24 * classes) and presence flags.");
  m.def("feature_name", &feature_name, py::arg("index"));

  m.def(
      "fit_ridge",
      [](const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y, double lambda, bool free_bias) {
        return fit_ridge(X, Y, lambda, free_bias);
      },
      py::arg("X"), py::arg("Y"), py::arg("lam"), py::arg("free_bias") = true,
      "Closed-form ridge solution; the last column of X is the unregularized bias when free_bias.");

  py::class_<SmoothingConfig>(m, "SmoothingConfig")
      .def(py::init([](std::vector<double> w) { return SmoothingConfig::from_weights(std::move(w)); }),
           py::arg("weights"))
      .def_static("exponential", &SmoothingConfig::exponential, py::arg("window"), py::arg("rho"))
      .def_readonly("weights", &SmoothingConfig::weights)
      .def_property_readonly("window", &SmoothingConfig::window);
  m.def(
      "smooth",
      [](const std::vector<Eigen::MatrixXd>& history, const SmoothingConfig& cfg) {
        return pose_array(smooth(poses_from(history), cfg));
      },
      py::arg("history"), py::arg("config"), "Weighted average of poses, newest first.");

  py::class_<RegressorModel>(m, "RegressorModel")
      .def_readonly("classes", &RegressorModel::classes)
      .def_readonly("joints", &RegressorModel::joints)
      .def_readonly("lam", &RegressorModel::lambda)
      .def_readonly("weights", &RegressorModel::weights)
      .def_readonly("smoothing", &RegressorModel::smoothing)
      .def_property_readonly("input_dim", &RegressorModel::input_dim);
  m.def(
      "train_regressor",
      [](const std::vector<Eigen::VectorXd>& feats, const std::vector<std::vector<std::uint8_t>>& present,
         const std::vector<Eigen::MatrixXd>& targets, double lambda) {
        if (feats.size() != present.size()) throw Error(ErrorCode::DimensionMismatch, "features/present lengths differ");
        std::vector<FeatureVector> f;
        for (std::size_t i = 0; i < feats.size(); ++i) f.push_back(features_from(feats[i], present[i]));
        return train_regressor(f, poses_from(targets), lambda);
      },
      py::arg("features"), py::arg("present"), py::arg("targets"), py::arg("lam"));
  m.def(
      "predict",
      [](const RegressorModel& model, const Eigen::VectorXd& values, const std::vector<std::uint8_t>& present) {
        return pose_array(predict(model, features_from(values, present)));
      },
      py::arg("model"), py::arg("features"), py::arg("present"));
  m.def("save_regressor", &save_regressor, py::arg("path"), py::arg("model"));
  m.def("load_regressor", &load_regressor, py::arg("path"));

  m.def(
      "fit_pipeline_regressor",
      [](const std::vector<std::filesystem::path>& containers, const Classifier& classifier, int folds,
         std::uint64_t seed, std::size_t limit) {
        auto cv = CvOptions::defaults();
        cv.folds = folds;
        PipelineOptions po;
        po.classes = classifier.classes();
        RegressorFit fit;
        {
          py::gil_scoped_release release;
          fit = fit_pipeline_regressor(containers, classifier, cv, seed, po, limit);
        }
        return py::make_tuple(fit.model, fit.cv.lambda, fit.cv.mean_error);
      },
      py::arg("containers"), py::arg("classifier"), py::arg("folds") = 5, py::arg("seed") = 1, py::arg("limit") = 0,
      "Cross-validated regressor fit; returns (model, lambda, cv_error).");

  m.def(
      "mean_joint_error",
      [](const std::vector<Eigen::MatrixXd>& preds, const std::vector<Eigen::MatrixXd>& truths) {
        const auto r = mean_joint_error(poses_from(preds), poses_from(truths));
        return py::make_tuple(r.overall, r.mean, r.stddev);
      },
      py::arg("predictions"), py::arg("truths"), "(overall, per-joint mean, per-joint std) in meters.");
  m.def(
      "precision_at",
      [](const std::vector<Eigen::MatrixXd>& preds, const std::vector<Eigen::MatrixXd>& truths,
         const std::vector<double>& thresholds) {
        return precision_at(poses_from(preds), poses_from(truths), thresholds).precision;
      },
      py::arg("predictions"), py::arg("truths"), py::arg("thresholds") = default_thresholds());
  m.def("default_thresholds", &default_thresholds);

  m.def(
      "run_experiment",
      [](const std::filesystem::path& container, const Classifier& classifier, const RegressorModel& regressor,
         bool smoothing, std::size_t limit, std::uint64_t seed) {
        ExperimentConfig cfg;
        cfg.container = container;
        cfg.classifier = &classifier;
        cfg.regressor = &regressor;
        cfg.smoothing = smoothing;
        cfg.pipeline.classes = classifier.classes();
        cfg.limit = limit;
        cfg.seed = seed;
        ExperimentReport r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg);
        }
        py::dict d;
        d["frames"] = r.frames;
        d["mean_error"] = r.errors.overall;
        d["joint_mean"] = r.errors.mean;
        d["joint_std"] = r.errors.stddev;
        d["thresholds"] = r.precision.thresholds;
        d["precision"] = r.precision.precision;
        d["dense_accuracy"] = r.dense_accuracy ? py::cast(*r.dense_accuracy) : py::none();
        py::dict stages;
        for (const auto& s : r.stages) stages[py::str(s.name)] = s.mean();
        d["stage_ms"] = stages;
        d["wall_ms"] = r.wall_ms;
        return d;
      },
      py::arg("container"), py::arg("classifier"), py::arg("regressor"), py::arg("smoothing") = true,
      py::arg("limit") = 0, py::arg("seed") = 1, "Full pipeline over a container; returns a report dict.");
}
