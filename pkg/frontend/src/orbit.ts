// Orbit camera parameterization, mirroring the engine's pose convention
// exactly: world-to-camera rows [right, down, forward], y-down image frame,
// pose wire format = row-major [R|T] (12 floats).

export interface OrbitParams {
  azimuthDeg: number;
  elevationDeg: number; // in (-90, 90)
  radius: number;       // > 0
  target: [number, number, number];
}

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function orbitEye(p: OrbitParams): Vec3 {
  const az = (p.azimuthDeg * Math.PI) / 180;
  const el = (p.elevationDeg * Math.PI) / 180;
  return [
    p.target[0] + p.radius * Math.cos(el) * Math.sin(az),
    p.target[1] + p.radius * Math.sin(el),
    p.target[2] + p.radius * Math.cos(el) * Math.cos(az),
  ];
}

// azimuth 0, elevation 0, radius r, target origin -> camera at (0,0,r)
// looking down -z.
export function orbitToPose(p: OrbitParams): number[] {
  if (p.radius <= 0) throw new Error("radius must be positive");
  if (p.elevationDeg <= -90 || p.elevationDeg >= 90)
    throw new Error("elevation must be inside (-90, 90)");
  const eye = orbitEye(p);
  const fwdRaw = sub(p.target, eye);
  const fwd = scale(fwdRaw, 1 / norm(fwdRaw));
  const up: Vec3 = [0, 1, 0];
  const rightRaw = cross(fwd, up);
  const rn = norm(rightRaw);
  if (rn < 1e-9) throw new Error("view direction parallel to up");
  const right = scale(rightRaw, 1 / rn);
  const down = cross(fwd, right);
  const R = [right, down, fwd];
  const T = [
    -(R[0][0] * eye[0] + R[0][1] * eye[1] + R[0][2] * eye[2]),
    -(R[1][0] * eye[0] + R[1][1] * eye[1] + R[1][2] * eye[2]),
    -(R[2][0] * eye[0] + R[2][1] * eye[1] + R[2][2] * eye[2]),
  ];
  return [
    R[0][0], R[0][1], R[0][2], T[0],
    R[1][0], R[1][1], R[1][2], T[1],
    R[2][0], R[2][1], R[2][2], T[2],
  ];
}

export function clampOrbit(p: OrbitParams): OrbitParams {
  return {
    ...p,
    elevationDeg: Math.min(89, Math.max(-89, p.elevationDeg)),
    radius: Math.max(1e-3, p.radius),
  };
}
