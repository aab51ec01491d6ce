from .geometry import CameraIntrinsics, Pose, Ray
