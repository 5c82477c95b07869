import { SurveyApi } from "./api.js";
import { SurveyController } from "./controller.js";
import { mountSurvey } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const backend = params.get("backend") ?? "";
const listenerId = params.get("listener") ?? `listener-${Date.now()}`;

const api = new SurveyApi(backend);
const controller = new SurveyController(api, listenerId);
mountSurvey(document.getElementById("app")!, api, controller);
void controller.start();
