#include "bilat/config.hpp"

#include <fstream>

namespace bilat {

namespace {

nlohmann::json joint_json(const JointParams& p) {
  return {{"inertia", p.inertia},
          {"viscous_friction", p.viscous_friction},
          {"coulomb_friction", p.coulomb_friction},
          {"gravity_amplitude", p.gravity_amplitude},
          {"torque_limit", p.torque_limit}};
}

JointParams joint_from_json(const nlohmann::json& j, JointParams base) {
  base.inertia = j.value("inertia", base.inertia);
  base.viscous_friction = j.value("viscous_friction", base.viscous_friction);
  base.coulomb_friction = j.value("coulomb_friction", base.coulomb_friction);
  base.gravity_amplitude = j.value("gravity_amplitude", base.gravity_amplitude);
  base.torque_limit = j.value("torque_limit", base.torque_limit);
  return base;
}

nlohmann::json contact_json(const ContactObject& c) {
  return {{"engage_angle", c.engage_angle},
          {"stiffness", c.stiffness},
          {"quadratic_stiffness", c.quadratic_stiffness},
          {"damping", c.damping},
          {"crush_deformation", c.crush_deformation}};
}

ContactObject contact_from_json(const nlohmann::json& j, ContactObject base) {
  base.engage_angle = j.value("engage_angle", base.engage_angle);
  base.stiffness = j.value("stiffness", base.stiffness);
  base.quadratic_stiffness = j.value("quadratic_stiffness", base.quadratic_stiffness);
  base.damping = j.value("damping", base.damping);
  base.crush_deformation = j.value("crush_deformation", base.crush_deformation);
  return base;
}

std::vector<double> vec_or(const nlohmann::json& j, const char* key,
                           std::vector<double> base) {
  if (j.contains(key)) base = j.at(key).get<std::vector<double>>();
  return base;
}

}  // namespace

RunConfig RunConfig::defaults(TaskKind task) {
  RunConfig c;
  c.task = task;
  JointParams joint;  // J=0.05, D=0.05, tau_c=0.01, G=0, limit=5

  if (task == TaskKind::cup) {
    c.joint_count = 5;
    c.follower_arms = 1;
    c.geometry.home_pose = {0.0, 0.0, 0.0, 0.0};
    c.geometry.grasp_pose = {0.3, 0.4, 0.3, 0.2};
    c.geometry.apex_pose = {0.0, 0.25, 0.3, 0.2};
    c.geometry.place_pose = {-0.3, 0.4, 0.3, 0.2};
    c.cameras.count = 3;
    // torque bands sit inside the paper's published grasp ranges
    c.experts["softly grasp the cup"] = {0.035, 0.0};
    c.experts["strongly grasp the cup"] = {0.175, 0.0};
    c.script.duration = 8.0;
    c.rollout.duration = 8.0;
    InstructionBand soft;
    soft.angle = {2.40, 2.47};
    soft.torque = {0.0, 0.08};
    InstructionBand strong;
    strong.angle = {2.44, 2.55};
    strong.torque = {0.12, 0.24};
    c.evaluation.bands["softly grasp the cup"] = soft;
    c.evaluation.bands["strongly grasp the cup"] = strong;
  } else {
    c.joint_count = 7;
    c.follower_arms = 2;
    c.geometry.home_pose = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    c.geometry.grasp_pose = {0.25, 0.35, 0.25, 0.15, 0.0, 0.0};
    c.geometry.apex_pose = {0.25, 0.15, 0.25, 0.15, 0.0, 0.0};
    c.geometry.place_pose = {0.25, 0.35, 0.25, 0.15, 0.0, 0.0};
    c.geometry.pose_tolerance = 0.6;  // wrists swing during the twist
    c.geometry.twist_goal = 0.12;
    c.cameras.count = 4;
    c.contact.stiffness = 1.5;
    c.contact.quadratic_stiffness = 4.0;
    c.contact.crush_deformation = 0.6;
    c.coupling.torsional_stiffness = 0.6;
    c.coupling.slip_coefficient = 2.8;
    c.experts["softly twist the sponge"] = {0.08, 0.08};
    c.experts["strongly twist the sponge"] = {0.24, 0.45};
    c.script.duration = 10.0;
    c.rollout.duration = 10.0;
    InstructionBand soft;
    soft.angle = {2.40, 2.50};
    soft.torque = {0.0, 0.13};
    soft.window_start = 6.0;
    InstructionBand strong;
    strong.angle = {2.45, 2.60};
    strong.torque = {0.17, 0.32};
    strong.window_start = 6.0;
    c.evaluation.bands["softly twist the sponge"] = soft;
    c.evaluation.bands["strongly twist the sponge"] = strong;
    c.policy.joint_count = 7;
    c.policy.arm_count = 4;
    c.policy.camera_count = 4;
  }

  c.plant.assign(c.joint_count, joint);
  c.gains.nominal_inertia.assign(c.joint_count, joint.inertia);
  c.observers.nominal = c.plant;
  c.policy.joint_count = c.joint_count;
  c.policy.arm_count = 2 * c.follower_arms;
  c.policy.camera_count = c.cameras.count;
  c.policy.language_dim = c.encoder.dim;
  c.coupling.left_grip = c.contact;
  c.coupling.right_grip = c.contact;
  return c;
}

void RunConfig::validate() const {
  if (static_cast<int>(plant.size()) != joint_count) {
    throw ConfigError("config: plant must list one joint per joint_count");
  }
  for (const auto& p : plant) p.validate();
  gains.validate();
  if (static_cast<int>(gains.nominal_inertia.size()) != joint_count) {
    throw ConfigError("config: controller nominal_inertia must cover every joint");
  }
  observers.validate();
  if (static_cast<int>(observers.nominal.size()) != joint_count) {
    throw ConfigError("config: observer nominal model must cover every joint");
  }
  contact.validate();
  coupling.validate();
  encoder.validate();
  dabi.validate();
  policy.validate();
  if (policy.joint_count != joint_count || policy.arm_count != 2 * follower_arms) {
    throw ConfigError("config: policy joint/arm counts must match the task");
  }
  if (policy.camera_count != cameras.count) {
    throw ConfigError("config: policy camera_count must match the camera rig");
  }
  if (policy.language_dim != encoder.dim) {
    throw ConfigError("config: policy language_dim must match the encoder dim");
  }
  if (experts.empty()) throw ConfigError("config: no expert targets configured");
  const double crush = contact.crush_torque();
  for (const auto& [instr, t] : experts) {
    if (!(t.torque_target > 0.0) || t.torque_target >= crush) {
      throw ConfigError("config: expert torque_target for \"" + instr +
                        "\" outside the pre-crush range");
    }
  }
  validate_bands(evaluation.bands);
  if (control_rate <= 0 || image_rate <= 0 || control_rate % image_rate != 0) {
    throw ConfigError("config: control_rate must be a positive multiple of image_rate");
  }
  if (!(script.duration > 0.0)) throw ConfigError("config: script duration must be > 0");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["task"] = to_string(task);
  j["seed"] = seed;
  j["rates"] = {{"control", control_rate}, {"image", image_rate}};

  nlohmann::json joints = nlohmann::json::array();
  for (const auto& p : plant) joints.push_back(joint_json(p));
  j["plant"] = joints;

  j["controller"] = {{"kp", gains.kp},
                     {"kd", gains.kd},
                     {"kf", gains.kf},
                     {"nominal_inertia", gains.nominal_inertia},
                     {"torque_constant", gains.torque_constant}};
  nlohmann::json obs_joints = nlohmann::json::array();
  for (const auto& p : observers.nominal) obs_joints.push_back(joint_json(p));
  j["observer"] = {{"dob_cutoff", observers.dob_cutoff},
                   {"velocity_epsilon", observers.velocity_epsilon},
                   {"nominal", obs_joints}};
  j["hand"] = {{"stiffness", hand.stiffness}, {"damping", hand.damping}};
  j["geometry"] = {{"home_pose", geometry.home_pose},
                   {"grasp_pose", geometry.grasp_pose},
                   {"apex_pose", geometry.apex_pose},
                   {"place_pose", geometry.place_pose},
                   {"pose_tolerance", geometry.pose_tolerance},
                   {"hold_torque_threshold", geometry.hold_torque_threshold},
                   {"gripper_open_angle", geometry.gripper_open_angle},
                   {"twist_goal", geometry.twist_goal},
                   {"source_x", geometry.source_x},
                   {"stack_x", geometry.stack_x},
                   {"drop_x", geometry.drop_x}};
  j["cameras"] = {{"count", cameras.count},
                  {"width", cameras.width},
                  {"height", cameras.height}};
  j["contact"] = contact_json(contact);
  j["coupling"] = {{"torsional_stiffness", coupling.torsional_stiffness},
                   {"rest_twist", coupling.rest_twist},
                   {"slip_coefficient", coupling.slip_coefficient}};
  nlohmann::json experts_json = nlohmann::json::object();
  for (const auto& [instr, t] : experts) {
    experts_json[instr] = {{"torque_target", t.torque_target}, {"twist", t.twist}};
  }
  j["experts"] = experts_json;
  j["script"] = {{"duration", script.duration},
                 {"pose_jitter", script.pose_jitter},
                 {"torque_jitter_frac", script.torque_jitter_frac},
                 {"time_jitter", script.time_jitter},
                 {"grip_close_rate", script.grip_close_rate},
                 {"grip_open_rate", script.grip_open_rate}};
  j["language"] = {{"kind", encoder.kind},
                   {"dim", encoder.dim},
                   {"seed", encoder.seed},
                   {"table_path", encoder.table_path},
                   {"encoder_id", encoder.encoder_id},
                   {"prompt",
                    {{"prefix", prompt.prefix},
                     {"suffix", prompt.suffix},
                     {"lowercase", prompt.lowercase}}}};
  j["dabi"] = {{"source_rate", dabi.source_rate}, {"target_rate", dabi.target_rate}};
  j["policy"] = policy;
  j["training"] = training;
  j["rollout"] = {{"duration", rollout.duration},
                  {"ensembling", rollout.ensembling},
                  {"ensemble_decay", rollout.ensemble_decay},
                  {"replan_interval", rollout.replan_interval},
                  {"async_inference", rollout.async_inference}};
  nlohmann::json bands = nlohmann::json::object();
  for (const auto& [instr, b] : evaluation.bands) {
    bands[instr] = {{"angle", {b.angle.lo, b.angle.hi}},
                    {"torque", {b.torque.lo, b.torque.hi}},
                    {"window", {b.window_start, b.window_end}}};
  }
  j["evaluation"] = {{"bands", bands}, {"bins", evaluation.bins}, {"arm", evaluation.arm}};
  j["paths"] = {{"demos", paths.demos},
                {"augmented", paths.augmented},
                {"checkpoint", paths.checkpoint},
                {"train_log", paths.train_log},
                {"rollouts", paths.rollouts},
                {"report", paths.report}};
  return j;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  const std::string task_name = j.value("task", std::string("cup"));
  RunConfig c = RunConfig::defaults(task_kind_from_string(task_name));

  c.seed = j.value("seed", c.seed);
  if (j.contains("rates")) {
    c.control_rate = j["rates"].value("control", c.control_rate);
    c.image_rate = j["rates"].value("image", c.image_rate);
  }
  if (j.contains("plant")) {
    const auto& arr = j.at("plant");
    if (!arr.is_array() || static_cast<int>(arr.size()) != c.joint_count) {
      throw ConfigError("config: plant must be an array with one entry per joint");
    }
    for (int i = 0; i < c.joint_count; ++i) {
      c.plant[i] = joint_from_json(arr[i], c.plant[i]);
    }
    // nominal models follow the plant unless the file overrides them below
    c.observers.nominal = c.plant;
    for (int i = 0; i < c.joint_count; ++i) {
      c.gains.nominal_inertia[i] = c.plant[i].inertia;
    }
  }
  if (j.contains("controller")) {
    const auto& ctl = j.at("controller");
    c.gains.kp = ctl.value("kp", c.gains.kp);
    c.gains.kd = ctl.value("kd", c.gains.kd);
    c.gains.kf = ctl.value("kf", c.gains.kf);
    c.gains.torque_constant = ctl.value("torque_constant", c.gains.torque_constant);
    c.gains.nominal_inertia = vec_or(ctl, "nominal_inertia", c.gains.nominal_inertia);
  }
  if (j.contains("observer")) {
    const auto& ob = j.at("observer");
    c.observers.dob_cutoff = ob.value("dob_cutoff", c.observers.dob_cutoff);
    c.observers.velocity_epsilon =
        ob.value("velocity_epsilon", c.observers.velocity_epsilon);
    if (ob.contains("nominal")) {
      const auto& arr = ob.at("nominal");
      if (static_cast<int>(arr.size()) != c.joint_count) {
        throw ConfigError("config: observer nominal must cover every joint");
      }
      for (int i = 0; i < c.joint_count; ++i) {
        c.observers.nominal[i] = joint_from_json(arr[i], c.observers.nominal[i]);
      }
    }
  }
  if (j.contains("hand")) {
    c.hand.stiffness = j["hand"].value("stiffness", c.hand.stiffness);
    c.hand.damping = j["hand"].value("damping", c.hand.damping);
  }
  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    c.geometry.home_pose = vec_or(g, "home_pose", c.geometry.home_pose);
    c.geometry.grasp_pose = vec_or(g, "grasp_pose", c.geometry.grasp_pose);
    c.geometry.apex_pose = vec_or(g, "apex_pose", c.geometry.apex_pose);
    c.geometry.place_pose = vec_or(g, "place_pose", c.geometry.place_pose);
    c.geometry.pose_tolerance = g.value("pose_tolerance", c.geometry.pose_tolerance);
    c.geometry.hold_torque_threshold =
        g.value("hold_torque_threshold", c.geometry.hold_torque_threshold);
    c.geometry.gripper_open_angle =
        g.value("gripper_open_angle", c.geometry.gripper_open_angle);
    c.geometry.twist_goal = g.value("twist_goal", c.geometry.twist_goal);
    c.geometry.source_x = g.value("source_x", c.geometry.source_x);
    c.geometry.stack_x = g.value("stack_x", c.geometry.stack_x);
    c.geometry.drop_x = g.value("drop_x", c.geometry.drop_x);
  }
  if (j.contains("cameras")) {
    c.cameras.count = j["cameras"].value("count", c.cameras.count);
    c.cameras.width = j["cameras"].value("width", c.cameras.width);
    c.cameras.height = j["cameras"].value("height", c.cameras.height);
    c.policy.camera_count = c.cameras.count;
    c.policy.image_width = c.cameras.width;
    c.policy.image_height = c.cameras.height;
  }
  if (j.contains("contact")) {
    c.contact = contact_from_json(j.at("contact"), c.contact);
    c.coupling.left_grip = c.contact;
    c.coupling.right_grip = c.contact;
  }
  if (j.contains("coupling")) {
    const auto& cp = j.at("coupling");
    c.coupling.torsional_stiffness =
        cp.value("torsional_stiffness", c.coupling.torsional_stiffness);
    c.coupling.rest_twist = cp.value("rest_twist", c.coupling.rest_twist);
    c.coupling.slip_coefficient =
        cp.value("slip_coefficient", c.coupling.slip_coefficient);
  }
  if (j.contains("experts")) {
    c.experts.clear();
    for (const auto& [instr, t] : j.at("experts").items()) {
      ExpertTargets et;
      et.torque_target = t.value("torque_target", et.torque_target);
      et.twist = t.value("twist", et.twist);
      c.experts[instr] = et;
    }
  }
  if (j.contains("script")) {
    const auto& s = j.at("script");
    c.script.duration = s.value("duration", c.script.duration);
    c.script.pose_jitter = s.value("pose_jitter", c.script.pose_jitter);
    c.script.torque_jitter_frac =
        s.value("torque_jitter_frac", c.script.torque_jitter_frac);
    c.script.time_jitter = s.value("time_jitter", c.script.time_jitter);
    c.script.grip_close_rate = s.value("grip_close_rate", c.script.grip_close_rate);
    c.script.grip_open_rate = s.value("grip_open_rate", c.script.grip_open_rate);
  }
  if (j.contains("language")) {
    const auto& l = j.at("language");
    c.encoder.kind = l.value("kind", c.encoder.kind);
    c.encoder.dim = l.value("dim", c.encoder.dim);
    c.encoder.seed = l.value("seed", c.encoder.seed);
    c.encoder.table_path = l.value("table_path", c.encoder.table_path);
    c.encoder.encoder_id = l.value("encoder_id", c.encoder.encoder_id);
    if (l.contains("prompt")) {
      const auto& p = l.at("prompt");
      c.prompt.prefix = p.value("prefix", c.prompt.prefix);
      c.prompt.suffix = p.value("suffix", c.prompt.suffix);
      c.prompt.lowercase = p.value("lowercase", c.prompt.lowercase);
    }
    c.policy.language_dim = c.encoder.dim;
  }
  if (j.contains("dabi")) {
    c.dabi.source_rate = j["dabi"].value("source_rate", c.dabi.source_rate);
    c.dabi.target_rate = j["dabi"].value("target_rate", c.dabi.target_rate);
  }
  if (j.contains("policy")) {
    nlohmann::json merged = nlohmann::json(c.policy);
    merged.update(j.at("policy"));
    c.policy = merged.get<PolicyConfig>();
  }
  if (j.contains("training")) {
    nlohmann::json merged = nlohmann::json(c.training);
    merged.update(j.at("training"));
    c.training = merged.get<TrainSettings>();
  }
  if (j.contains("rollout")) {
    const auto& r = j.at("rollout");
    c.rollout.duration = r.value("duration", c.rollout.duration);
    c.rollout.ensembling = r.value("ensembling", c.rollout.ensembling);
    c.rollout.ensemble_decay = r.value("ensemble_decay", c.rollout.ensemble_decay);
    c.rollout.replan_interval = r.value("replan_interval", c.rollout.replan_interval);
    c.rollout.async_inference = r.value("async_inference", c.rollout.async_inference);
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    c.evaluation.bins = e.value("bins", c.evaluation.bins);
    c.evaluation.arm = e.value("arm", c.evaluation.arm);
    if (e.contains("bands")) {
      c.evaluation.bands.clear();
      for (const auto& [instr, b] : e.at("bands").items()) {
        InstructionBand band;
        const auto angle = b.value("angle", std::vector<double>{0.0, 1.0});
        const auto torque = b.value("torque", std::vector<double>{0.0, 1.0});
        const auto window = b.value("window", std::vector<double>{-1.0, -1.0});
        band.angle = {angle.at(0), angle.at(1)};
        band.torque = {torque.at(0), torque.at(1)};
        band.window_start = window.at(0);
        band.window_end = window.at(1);
        c.evaluation.bands[instr] = band;
      }
    }
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    c.paths.demos = p.value("demos", c.paths.demos);
    c.paths.augmented = p.value("augmented", c.paths.augmented);
    c.paths.checkpoint = p.value("checkpoint", c.paths.checkpoint);
    c.paths.train_log = p.value("train_log", c.paths.train_log);
    c.paths.rollouts = p.value("rollouts", c.paths.rollouts);
    c.paths.report = p.value("report", c.paths.report);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_run_config(j);
}

void apply_override(nlohmann::json& doc, const std::string& dotted_key,
                    const std::string& json_value) {
  nlohmann::json* node = &doc;
  size_t pos = 0;
  std::string key = dotted_key;
  while ((pos = key.find('.')) != std::string::npos) {
    node = &(*node)[key.substr(0, pos)];
    key = key.substr(pos + 1);
  }
  try {
    (*node)[key] = nlohmann::json::parse(json_value);
  } catch (const nlohmann::json::exception&) {
    (*node)[key] = json_value;  // plain string value
  }
}

SessionConfig session_config(const RunConfig& cfg) {
  SessionConfig s;
  s.task = cfg.task;
  s.joint_count = cfg.joint_count;
  s.follower_arms = cfg.follower_arms;
  s.plant = cfg.plant;
  s.gains = cfg.gains;
  s.observers = cfg.observers;
  s.hand = cfg.hand;
  s.geometry = cfg.geometry;
  s.cameras = cfg.cameras;
  s.grip_object = cfg.contact;
  s.coupling = cfg.coupling;
  s.coupling.left_grip = cfg.contact;
  s.coupling.right_grip = cfg.contact;
  s.control_rate = cfg.control_rate;
  s.image_rate = cfg.image_rate;
  return s;
}

LanguageEncoder make_encoder(const RunConfig& cfg) {
  return LanguageEncoder(cfg.encoder, cfg.prompt);
}

ExpertScript build_expert_script(const RunConfig& cfg,
                                 const std::string& normalized_instruction) {
  const auto it = cfg.experts.find(normalized_instruction);
  if (it == cfg.experts.end()) {
    throw ConfigError("no expert targets configured for \"" + normalized_instruction +
                      "\"");
  }
  const ExpertTargets& targets = it->second;
  const double T = cfg.script.duration;
  const int arm_joints = cfg.joint_count - 1;
  const int arms = cfg.follower_arms;

  auto pose_all = [&](const std::vector<double>& pose) {
    std::vector<double> out;
    for (int a = 0; a < arms; ++a) {
      for (int j = 0; j < arm_joints; ++j) {
        out.push_back(j < static_cast<int>(pose.size()) ? pose[j] : 0.0);
      }
    }
    return out;
  };

  ExpertScript script;
  script.pose_jitter = cfg.script.pose_jitter;
  script.torque_jitter_frac = cfg.script.torque_jitter_frac;
  script.time_jitter = cfg.script.time_jitter;

  if (cfg.task == TaskKind::cup) {
    // approach, dwell while gripping, carry over the stack, place, retreat
    script.waypoints = {
        {0.0, pose_all(cfg.geometry.home_pose)},
        {0.15 * T, pose_all(cfg.geometry.grasp_pose)},
        {0.425 * T, pose_all(cfg.geometry.grasp_pose)},
        {0.625 * T, pose_all(cfg.geometry.apex_pose)},
        {0.775 * T, pose_all(cfg.geometry.place_pose)},
        {1.0 * T, pose_all(cfg.geometry.place_pose)},
    };
    ExpertScript::Grip grip;
    grip.close_start = 0.175 * T;
    grip.close_rate = cfg.script.grip_close_rate;
    grip.torque_target = targets.torque_target;
    grip.open_start = 0.8125 * T;
    grip.open_rate = cfg.script.grip_open_rate;
    script.grippers.assign(arms, grip);
  } else {
    // grab, lift, twist the wrists in opposite directions, hold
    std::vector<double> grasp = pose_all(cfg.geometry.grasp_pose);
    std::vector<double> lift = pose_all(cfg.geometry.apex_pose);
    std::vector<double> twisted = lift;
    const int wrist = arm_joints - 1;
    twisted[wrist] += targets.twist;               // left arm
    twisted[arm_joints + wrist] -= targets.twist;  // right arm
    script.waypoints = {
        {0.0, pose_all(cfg.geometry.home_pose)},
        {0.12 * T, grasp},
        {0.30 * T, grasp},
        {0.45 * T, lift},
        {0.60 * T, lift},
        {0.80 * T, twisted},
        {1.0 * T, twisted},
    };
    ExpertScript::Grip grip;
    grip.close_start = 0.14 * T;
    grip.close_rate = cfg.script.grip_close_rate;
    grip.torque_target = targets.torque_target;
    grip.open_start = -1.0;  // hold to the end
    script.grippers.assign(arms, grip);
  }
  return script;
}

}  // namespace bilat
