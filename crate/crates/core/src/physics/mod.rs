//! Rigid-body physics over colliders derived from baked meshes.

pub mod collider;
pub mod contact;
pub mod decompose;
pub mod hull;
pub mod replay;
pub mod world;

pub use collider::{make_collider, Collider, ColliderConfig, ColliderKind, MassProperties, Primitive};
pub use contact::{collide, ContactPoint};
pub use decompose::{assign_params, decompose, extract_entity, inpaint_entity_texture, label_voxels, DecomposeConfig, Entity, LabelSource, ParamTable, PhysicalParams, VoxelGrid};
pub use replay::{parse_replay, replay_bytes, run_script, Script, ScriptAction, Spawn};
pub use hull::{convex_hull, ConvexHull, Polyhedron};
pub use world::{Action, Body, BodySpec, PhysicsWorld, RayHit, ReplayFrame, RigidBodyState, SolverSettings};
