export {
  Action,
  ConnectionError,
  EnvHandle,
  EnvProtocolError,
  FlowSummary,
  MakeEnvOptions,
  ObservationLayout,
  ScenarioSummary,
  StepResult,
  makeEnv,
} from "./client.js";
export {
  FrameReader,
  FramingError,
  Message,
  MessageType,
  PROTOCOL_VERSION,
  ProtocolError,
  VersionError,
  decodeBody,
  encodeMessage,
} from "./protocol.js";
export { mulberry32, randomAction } from "./randomAgent.js";
