import { Api, ApiError } from "./api.js";

export function renderLogin(container: HTMLElement, api: Api, onSuccess: () => void): void {
  container.innerHTML = `
    <div class="login-box">
      <h1>chips</h1>
      <form id="login-form">
        <label>login <input name="login" id="login-name" autocomplete="username"></label>
        <label>secret <input name="secret" id="login-secret" type="password"></label>
        <button type="submit">Sign in</button>
        <div id="login-error" class="error" hidden></div>
      </form>
    </div>`;
  const form = container.querySelector<HTMLFormElement>("#login-form")!;
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const name = (container.querySelector<HTMLInputElement>("#login-name")!).value;
    const secret = (container.querySelector<HTMLInputElement>("#login-secret")!).value;
    const errorBox = container.querySelector<HTMLElement>("#login-error")!;
    try {
      await api.login(name, secret);
      onSuccess();
    } catch (err) {
      errorBox.hidden = false;
      errorBox.textContent = err instanceof ApiError ? err.message : String(err);
    }
  });
}
